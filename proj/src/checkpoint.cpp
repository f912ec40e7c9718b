#include "sseds/checkpoint.hpp"

#include "sseds/detail/bytes.hpp"

namespace sseds {

namespace {

constexpr std::uint8_t kFlagAdam = 1;

void put_moments(detail::ByteWriter& w, const Moments<float>& m) {
  for (const auto& t : m.tables) w.put_matrix_rowmajor(t);
  for (const auto& l : m.linear) w.put_matrix_rowmajor(l);
  w.put(m.bias);
  for (const auto& layer : m.mlp) {
    w.put_matrix_rowmajor(layer.weight);
    w.put_matrix_rowmajor(layer.bias);
  }
  for (const auto& t : m.transforms) w.put_matrix_rowmajor(t);
}

void get_moments(detail::ByteReader& r, Moments<float>& m) {
  for (auto& t : m.tables) r.get_matrix_rowmajor(t);
  for (auto& l : m.linear) r.get_matrix_rowmajor(l);
  m.bias = r.get<float>();
  for (auto& layer : m.mlp) {
    r.get_matrix_rowmajor(layer.weight);
    r.get_matrix_rowmajor(layer.bias);
  }
  for (auto& t : m.transforms) r.get_matrix_rowmajor(t);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& model = ckpt.model;
  if (ckpt.kind != CheckpointKind::dense && !ckpt.layout)
    throw UsageError("mixed and slim checkpoints need a layout");
  if ((ckpt.kind == CheckpointKind::slim) != !model.transforms.empty())
    throw UsageError("only slim checkpoints carry transforms");

  detail::ByteWriter w;
  w.put_bytes("SSED");
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(model.architecture));
  w.put(static_cast<std::uint8_t>(ckpt.kind));
  w.put(static_cast<std::uint8_t>(ckpt.adam ? kFlagAdam : 0));
  w.put(std::uint16_t{0});

  w.put(static_cast<std::uint32_t>(model.tables.size()));
  for (std::size_t k = 0; k < model.tables.size(); ++k) {
    w.put(model.field_ids[k]);
    w.put(static_cast<std::uint32_t>(model.tables[k].rows()));
    w.put(static_cast<std::uint32_t>(model.tables[k].cols()));
  }
  for (const auto& t : model.tables) w.put_matrix_rowmajor(t);

  w.put(static_cast<float>(model.theta.bias));
  for (const auto& l : model.theta.linear) w.put_matrix_rowmajor(l);
  w.put(static_cast<std::uint32_t>(model.theta.mlp.size()));
  for (const auto& layer : model.theta.mlp) {
    w.put(static_cast<std::uint32_t>(layer.weight.rows()));
    w.put(static_cast<std::uint32_t>(layer.weight.cols()));
    w.put_matrix_rowmajor(layer.weight);
    w.put_matrix_rowmajor(layer.bias);
  }

  if (ckpt.kind == CheckpointKind::slim) {
    w.put(static_cast<std::uint32_t>(model.width()));
    for (const auto& t : model.transforms) w.put_matrix_rowmajor(t);
  }

  if (ckpt.kind != CheckpointKind::dense) {
    const auto& layout = *ckpt.layout;
    if (layout.kept_dims.size() != model.tables.size()) throw UsageError("layout does not match the tables");
    w.put(static_cast<std::uint32_t>(layout.original_dim));
    w.put(static_cast<std::uint32_t>(layout.removed_fields.size()));
    for (auto id : layout.removed_fields) w.put(id);
    for (const auto& dims : layout.kept_dims) {
      w.put(static_cast<std::uint32_t>(dims.size()));
      for (auto j : dims) w.put(static_cast<std::uint32_t>(j));
    }
    w.put(static_cast<std::uint8_t>(kParamGroups));
    for (auto p : layout.provenance) w.put(static_cast<std::uint8_t>(p));
  }

  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    w.put(a.config.lr);
    w.put(a.config.beta1);
    w.put(a.config.beta2);
    w.put(a.config.epsilon);
    w.put(a.step);
    put_moments(w, a.first);
    put_moments(w, a.second);
  }

  w.put(detail::crc32(w.bytes()));
  return w.bytes();
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 8) throw DataError(what + ": truncated file");
  const auto body = bytes.substr(0, bytes.size() - 4);
  detail::ByteReader tail(bytes.substr(bytes.size() - 4), what);
  if (tail.get<std::uint32_t>() != detail::crc32(body)) throw DataError(what + ": CRC mismatch");

  detail::ByteReader r(body, what);
  if (r.get_bytes(4) != "SSED") throw DataError(what + ": not a checkpoint");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError(what + ": unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  auto& model = ckpt.model;
  auto arch = r.get<std::uint32_t>();
  if (arch > 2) throw DataError(what + ": unknown architecture tag");
  model.architecture = static_cast<Architecture>(arch);
  auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw DataError(what + ": unknown checkpoint kind");
  ckpt.kind = static_cast<CheckpointKind>(kind);
  auto flags = r.get<std::uint8_t>();
  r.get<std::uint16_t>();

  auto q = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < q; ++k) {
    model.field_ids.push_back(r.get<std::uint32_t>());
    auto n = r.get<std::uint32_t>();
    auto d = r.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(n) * d * 4 > r.remaining()) throw DataError(what + ": truncated file");
    model.tables.emplace_back(n, d);
  }
  for (auto& t : model.tables) r.get_matrix_rowmajor(t);

  model.theta.bias = r.get<float>();
  for (const auto& t : model.tables) {
    Vec<float> l(t.rows());
    r.get_matrix_rowmajor(l);
    model.theta.linear.push_back(std::move(l));
  }
  auto layers = r.get<std::uint32_t>();
  for (std::uint32_t l = 0; l < layers; ++l) {
    auto out = r.get<std::uint32_t>();
    auto in = r.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(out) * in * 4 > r.remaining()) throw DataError(what + ": truncated file");
    DenseLayer<float> layer{Mat<float>(out, in), Vec<float>(out)};
    r.get_matrix_rowmajor(layer.weight);
    r.get_matrix_rowmajor(layer.bias);
    model.theta.mlp.push_back(std::move(layer));
  }

  if (ckpt.kind == CheckpointKind::slim) {
    auto width = r.get<std::uint32_t>();
    for (const auto& t : model.tables) {
      Mat<float> m(width, t.cols());
      r.get_matrix_rowmajor(m);
      model.transforms.push_back(std::move(m));
    }
  }

  if (ckpt.kind != CheckpointKind::dense) {
    SlimLayout layout;
    layout.original_dim = r.get<std::uint32_t>();
    auto removed = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < removed; ++k) layout.removed_fields.push_back(r.get<std::uint32_t>());
    for (std::uint32_t k = 0; k < q; ++k) {
      auto count = r.get<std::uint32_t>();
      std::vector<Index> dims;
      for (std::uint32_t j = 0; j < count; ++j) dims.push_back(r.get<std::uint32_t>());
      layout.kept_dims.push_back(std::move(dims));
    }
    auto groups = r.get<std::uint8_t>();
    if (groups != kParamGroups) throw DataError(what + ": unexpected provenance group count");
    for (auto& p : layout.provenance) {
      auto v = r.get<std::uint8_t>();
      if (v > 2) throw DataError(what + ": bad provenance flag");
      p = static_cast<Provenance>(v);
    }
    ckpt.layout = std::move(layout);
  }

  if (flags & kFlagAdam) {
    AdamState<float> a;
    a.config.lr = r.get<double>();
    a.config.beta1 = r.get<double>();
    a.config.beta2 = r.get<double>();
    a.config.epsilon = r.get<double>();
    a.step = r.get<std::uint64_t>();
    a.first = Moments<float>::zeros_like(model);
    a.second = Moments<float>::zeros_like(model);
    get_moments(r, a.first);
    get_moments(r, a.second);
    ckpt.adam = std::move(a);
  }
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes");
  if (ckpt.kind != CheckpointKind::mixed) model.validate();
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path), path.string());
}

Checkpoint dense_checkpoint(const Model<float>& model) {
  Checkpoint c;
  c.kind = CheckpointKind::dense;
  c.model = model;
  return c;
}

Checkpoint slim_checkpoint(const SlimModel<float>& slim) {
  Checkpoint c;
  c.kind = CheckpointKind::slim;
  c.model = slim.net;
  c.layout = slim.layout;
  return c;
}

SlimModel<float> slim_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::slim || !ckpt.layout) throw DataError("not a slim checkpoint");
  return {ckpt.model, *ckpt.layout};
}

Checkpoint mixed_checkpoint(const Model<float>& pretrained, const MixedDimTable<float>& table) {
  Checkpoint c;
  c.kind = CheckpointKind::mixed;
  c.model = pretrained;
  c.model.transforms.clear();
  SlimLayout layout;
  layout.original_dim = table.original_dim;
  layout.removed_fields = table.removed_fields;
  layout.provenance.fill(Provenance::winning_ticket);
  for (std::size_t k = 0; k < pretrained.tables.size(); ++k) {
    auto id = pretrained.field_ids[k];
    auto it = std::find_if(table.fields.begin(), table.fields.end(), [id](const auto& f) { return f.field_id == id; });
    if (it == table.fields.end()) {
      c.model.tables[k].resize(pretrained.tables[k].rows(), 0);
      layout.kept_dims.emplace_back();
    } else {
      c.model.tables[k] = it->values;
      layout.kept_dims.push_back(it->kept_dims);
    }
  }
  c.layout = std::move(layout);
  return c;
}

MixedDimTable<float> mixed_table(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::mixed || !ckpt.layout) throw DataError("not a mixed-dimension checkpoint");
  MixedDimTable<float> table;
  table.original_dim = ckpt.layout->original_dim;
  table.removed_fields = ckpt.layout->removed_fields;
  for (std::size_t k = 0; k < ckpt.model.tables.size(); ++k) {
    if (ckpt.layout->kept_dims[k].empty()) continue;
    table.fields.push_back({ckpt.model.field_ids[k], ckpt.layout->kept_dims[k], ckpt.model.tables[k]});
  }
  return table;
}

}  // namespace sseds
