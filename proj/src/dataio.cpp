#include "sseds/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>

#include "sseds/detail/bytes.hpp"

namespace sseds {

std::vector<std::uint32_t> FieldSchema::cardinalities() const {
  std::vector<std::uint32_t> out;
  out.reserve(fields.size());
  for (const auto& f : fields) out.push_back(f.cardinality);
  return out;
}

void FieldSchema::validate() const {
  if (fields.empty()) throw DataError("schema has no fields");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].id != i) throw DataError("schema field ids must be contiguous from 0");
    if (fields[i].cardinality == 0)
      throw DataError("field " + fields[i].name + " has empty vocabulary");
  }
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{std::string(kOthersToken)} {}

Vocabulary::Vocabulary(std::vector<std::string> surviving) : Vocabulary() {
  for (auto& t : surviving) {
    auto id = static_cast<std::uint32_t>(tokens_.size());
    if (!ids_.emplace(t, id).second) throw DataError("duplicate vocabulary token: " + t);
    tokens_.push_back(std::move(t));
  }
}

std::uint32_t Vocabulary::lookup(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kOthers : it->second;
}

Vocabulary build_vocab(std::span<const std::string> stream, std::uint32_t min_freq) {
  if (min_freq < 1) throw UsageError("min_freq must be >= 1");
  if (stream.empty()) throw DataError("empty field");
  // std::map keeps surviving tokens in lexicographic order, so ids do not
  // depend on stream order.
  std::map<std::string_view, std::uint64_t> counts;
  for (const auto& t : stream) {
    if (!t.empty()) ++counts[t];
  }
  std::vector<std::string> surviving;
  for (const auto& [token, count] : counts) {
    if (count >= min_freq) surviving.emplace_back(token);
  }
  return Vocabulary(std::move(surviving));
}

// ---------------------------------------------------------------------------

std::int64_t transform_numeric(double x, LogBase base) {
  if (!std::isfinite(x)) throw DataError("invalid numeric");
  if (x < 0) return kNegativeBucket;
  if (x <= 2) return static_cast<std::int64_t>(std::floor(x));
  double l = base == LogBase::natural ? std::log(x) : std::log2(x);
  return static_cast<std::int64_t>(std::floor(l * l));
}

std::string numeric_token(double x, LogBase base) {
  auto bucket = transform_numeric(x, base);
  return bucket == kNegativeBucket ? std::string("neg") : std::to_string(bucket);
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "none";
}

// ---------------------------------------------------------------------------

Record Dataset::record(std::size_t r) const {
  Record rec;
  auto row = tokens.row(static_cast<Index>(r));
  rec.tokens.assign(row.data(), row.data() + row.size());
  rec.label = labels(static_cast<Index>(r));
  return rec;
}

Dataset Dataset::subset(std::span<const std::size_t> rows, Split tag) const {
  Dataset out;
  out.schema = schema;
  out.split = tag;
  out.tokens.resize(static_cast<Index>(rows.size()), tokens.cols());
  out.labels.resize(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.tokens.row(static_cast<Index>(k)) = tokens.row(static_cast<Index>(rows[k]));
    out.labels(static_cast<Index>(k)) = labels(static_cast<Index>(rows[k]));
  }
  return out;
}

void Dataset::validate() const {
  schema.validate();
  if (tokens.cols() != static_cast<Index>(schema.size()))
    throw DataError("token matrix width does not match schema");
  if (tokens.rows() != labels.size()) throw DataError("token/label count mismatch");
  for (Index r = 0; r < tokens.rows(); ++r) {
    if (labels(r) > 1) throw DataError("label out of range at record " + std::to_string(r));
    for (Index i = 0; i < tokens.cols(); ++i) {
      if (tokens(r, i) >= schema.fields[static_cast<std::size_t>(i)].cardinality)
        throw DataError("token out of range at record " + std::to_string(r));
    }
  }
}

double Dataset::positive_rate() const {
  if (labels.size() == 0) return 0.0;
  return labels.cast<double>().mean();
}

Batch Batch::whole(const Dataset& data) {
  Batch b;
  b.tokens = data.tokens;
  b.labels = data.labels;
  return b;
}

Batch Batch::from_records(std::span<const Record> records) {
  Batch b;
  if (records.empty()) return b;
  auto m = static_cast<Index>(records.front().tokens.size());
  b.tokens.resize(static_cast<Index>(records.size()), m);
  b.labels.resize(static_cast<Index>(records.size()));
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (static_cast<Index>(records[r].tokens.size()) != m)
      throw DataError("records disagree on field count");
    for (Index i = 0; i < m; ++i)
      b.tokens(static_cast<Index>(r), i) = records[r].tokens[static_cast<std::size_t>(i)];
    b.labels(static_cast<Index>(r)) = records[r].label;
  }
  return b;
}

// ---------------------------------------------------------------------------

std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> ratios,
                                                      std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0) || !std::isfinite(r)) throw UsageError("split ratios must be positive");
  }
  if (n < ratios.size()) throw DataError("fewer records than partitions");

  double total = ratios[0] + ratios[1] + ratios[2];
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    double exact = static_cast<double>(n) * ratios[k] / total;
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  // Largest remainder; ties go to the earlier partition.
  std::array<std::size_t, 3> by_remainder{0, 1, 2};
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[by_remainder[k % 3]];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::array<std::vector<std::size_t>, 3> parts;
  auto it = order.begin();
  for (std::size_t k = 0; k < 3; ++k) {
    parts[k].assign(it, it + static_cast<std::ptrdiff_t>(sizes[k]));
    it += static_cast<std::ptrdiff_t>(sizes[k]);
  }
  return parts;
}

std::array<Dataset, 3> split(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed) {
  if (data.size() == 0) throw DataError("cannot split an empty dataset");
  auto parts = split_indices(data.size(), ratios, seed);
  return {data.subset(parts[0], Split::train), data.subset(parts[1], Split::valid),
          data.subset(parts[2], Split::test)};
}

BatchPlan::BatchPlan(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  order_.resize(data.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  batches_ = (data.size() + batch_size - 1) / batch_size;
}

Batch BatchPlan::operator[](std::size_t k) const {
  if (k >= batches_) throw std::out_of_range("batch index");
  std::size_t begin = k * batch_size_;
  std::size_t end = std::min(begin + batch_size_, order_.size());
  Batch b;
  b.index = k;
  b.tokens.resize(static_cast<Index>(end - begin), data_->tokens.cols());
  b.labels.resize(static_cast<Index>(end - begin));
  for (std::size_t r = begin; r < end; ++r) {
    auto dst = static_cast<Index>(r - begin);
    b.tokens.row(dst) = data_->tokens.row(static_cast<Index>(order_[r]));
    b.labels(dst) = data_->labels(static_cast<Index>(order_[r]));
  }
  return b;
}

BatchPlan batch_iter(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  return BatchPlan(data, batch_size, seed, shuffle);
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  auto m = cardinalities.size();
  if (m < 2) throw UsageError("synthetic spec needs at least two fields");
  if (records == 0) throw UsageError("synthetic spec needs at least one record");
  for (auto n : cardinalities) {
    if (n == 0) throw UsageError("synthetic field cardinality must be >= 1");
  }
  if (profile.rows() != static_cast<Index>(m) || profile.cols() < 1)
    throw UsageError("synthetic profile must have one row per field");
  if (!profile.allFinite() || (profile.array() < 0).any())
    throw UsageError("synthetic profile entries must be finite and non-negative");
  if (!(linear_scale >= 0) || !std::isfinite(bias) || !(zipf_exponent >= 0))
    throw UsageError("invalid synthetic scalars");
}

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto m = static_cast<Index>(spec.cardinalities.size());
  const Index rank = spec.profile.cols();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Latent token factors, already scaled by the planted profile.
  std::vector<Eigen::MatrixXd> factors(static_cast<std::size_t>(m));
  std::vector<Eigen::VectorXd> main_effects(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    auto n = static_cast<Index>(spec.cardinalities[static_cast<std::size_t>(i)]);
    auto& f = factors[static_cast<std::size_t>(i)];
    f.resize(n, rank);
    for (Index t = 0; t < n; ++t)
      for (Index k = 0; k < rank; ++k) f(t, k) = normal(rng) * spec.profile(i, k);
    auto& b = main_effects[static_cast<std::size_t>(i)];
    b.resize(n);
    for (Index t = 0; t < n; ++t) b(t) = normal(rng) * spec.linear_scale;
  }

  std::vector<std::discrete_distribution<std::uint32_t>> pickers;
  for (auto n : spec.cardinalities) {
    std::vector<double> w(n);
    for (std::uint32_t t = 0; t < n; ++t) w[t] = std::pow(static_cast<double>(t) + 1.0, -spec.zipf_exponent);
    pickers.emplace_back(w.begin(), w.end());
  }

  Dataset out;
  for (Index i = 0; i < m; ++i) {
    out.schema.fields.push_back({static_cast<std::uint32_t>(i), FieldKind::categorical,
                                 "f" + std::to_string(i),
                                 spec.cardinalities[static_cast<std::size_t>(i)]});
  }
  const auto records = static_cast<Index>(spec.records);
  out.tokens.resize(records, m);
  out.labels.resize(records);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd sum(rank);
  for (Index r = 0; r < records; ++r) {
    double logit = spec.bias;
    sum.setZero();
    double self = 0.0;
    for (Index i = 0; i < m; ++i) {
      auto t = pickers[static_cast<std::size_t>(i)](rng);
      out.tokens(r, i) = t;
      const auto& f = factors[static_cast<std::size_t>(i)];
      logit += main_effects[static_cast<std::size_t>(i)](t);
      sum += f.row(t).transpose();
      self += f.row(t).squaredNorm();
    }
    logit += 0.5 * (sum.squaredNorm() - self);
    if (spec.deterministic_labels) {
      out.labels(r) = logit > 0 ? 1 : 0;
    } else {
      double p = 1.0 / (1.0 + std::exp(-logit));
      out.labels(r) = unit(rng) < p ? 1 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_line(std::string_view line, char sep) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cols;
}

bool parse_label(std::string_view s, std::uint8_t& label) {
  if (s == "0") label = 0;
  else if (s == "1") label = 1;
  else return false;
  return true;
}

std::string_view chomp(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

RawRows read_criteo(std::istream& in, bool strict, LogBase base) {
  constexpr std::size_t kNumeric = 13, kCategorical = 26;
  RawRows raw;
  for (std::size_t i = 0; i < kNumeric; ++i)
    raw.fields.push_back({static_cast<std::uint32_t>(i), FieldKind::numeric, "I" + std::to_string(i + 1), 0});
  for (std::size_t i = 0; i < kCategorical; ++i)
    raw.fields.push_back({static_cast<std::uint32_t>(kNumeric + i), FieldKind::categorical,
                          "C" + std::to_string(i + 1), 0});

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = chomp(line);
    if (view.empty()) continue;
    auto cols = split_line(view, '\t');
    std::uint8_t label = 0;
    std::string problem;
    if (cols.size() != 1 + kNumeric + kCategorical) {
      problem = "expected 40 columns, got " + std::to_string(cols.size());
    } else if (!parse_label(cols[0], label)) {
      problem = "bad label";
    }
    std::vector<std::string> row;
    if (problem.empty()) {
      row.reserve(kNumeric + kCategorical);
      for (std::size_t i = 0; i < kNumeric && problem.empty(); ++i) {
        auto s = cols[1 + i];
        if (s.empty()) {
          row.emplace_back();
          continue;
        }
        double x = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(x)) {
          problem = "invalid numeric in column " + std::to_string(i + 2);
        } else {
          row.push_back(numeric_token(x, base));
        }
      }
      for (std::size_t i = 0; i < kCategorical; ++i) row.emplace_back(cols[1 + kNumeric + i]);
    }
    if (!problem.empty()) {
      if (strict) throw DataError("line " + std::to_string(line_no) + ": " + problem);
      ++raw.skipped;
      continue;
    }
    raw.rows.push_back(std::move(row));
    raw.labels.push_back(label);
  }
  return raw;
}

RawRows read_avazu(std::istream& in, bool strict) {
  constexpr std::size_t kCategorical = 22;
  RawRows raw;
  std::string line;
  if (!std::getline(in, line)) throw DataError("avazu input is empty");
  auto header = split_line(chomp(line), ',');
  if (header.size() != 2 + kCategorical)
    throw DataError("line 1: avazu header must have 24 columns");
  for (std::size_t i = 0; i < kCategorical; ++i)
    raw.fields.push_back({static_cast<std::uint32_t>(i), FieldKind::categorical, std::string(header[2 + i]), 0});

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = chomp(line);
    if (view.empty()) continue;
    auto cols = split_line(view, ',');
    std::uint8_t label = 0;
    std::string problem;
    if (cols.size() != 2 + kCategorical) {
      problem = "expected 24 columns, got " + std::to_string(cols.size());
    } else if (!parse_label(cols[1], label)) {
      problem = "bad label";
    }
    if (!problem.empty()) {
      if (strict) throw DataError("line " + std::to_string(line_no) + ": " + problem);
      ++raw.skipped;
      continue;
    }
    std::vector<std::string> row;
    row.reserve(kCategorical);
    for (std::size_t i = 0; i < kCategorical; ++i) row.emplace_back(cols[2 + i]);
    raw.rows.push_back(std::move(row));
    raw.labels.push_back(label);
  }
  return raw;
}

EncodedData encode(const RawRows& raw, std::array<double, 3> ratios, std::uint32_t min_freq,
                   std::uint64_t seed) {
  if (raw.rows.empty()) throw DataError("no records to encode");
  auto parts = split_indices(raw.rows.size(), ratios, seed);
  const std::size_t m = raw.fields.size();

  EncodedData out;
  FieldSchema schema;
  std::vector<std::string> column;
  for (std::size_t i = 0; i < m; ++i) {
    column.clear();
    for (auto r : parts[0]) column.push_back(raw.rows[r][i]);
    out.vocabularies.push_back(build_vocab(column, min_freq));
    Field f = raw.fields[i];
    f.id = static_cast<std::uint32_t>(i);
    f.cardinality = out.vocabularies.back().size();
    schema.fields.push_back(std::move(f));
  }

  constexpr std::array<Split, 3> tags{Split::train, Split::valid, Split::test};
  for (std::size_t k = 0; k < 3; ++k) {
    Dataset& d = out.splits[k];
    d.schema = schema;
    d.split = tags[k];
    d.tokens.resize(static_cast<Index>(parts[k].size()), static_cast<Index>(m));
    d.labels.resize(static_cast<Index>(parts[k].size()));
    for (std::size_t r = 0; r < parts[k].size(); ++r) {
      const auto& row = raw.rows[parts[k][r]];
      for (std::size_t i = 0; i < m; ++i)
        d.tokens(static_cast<Index>(r), static_cast<Index>(i)) = out.vocabularies[i].lookup(row[i]);
      d.labels(static_cast<Index>(r)) = raw.labels[parts[k][r]];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  detail::ByteWriter w;
  w.put_bytes("SSDS");
  w.put(kDatasetCacheVersion);
  w.put(static_cast<std::uint8_t>(data.split));
  w.put(static_cast<std::uint32_t>(data.schema.size()));
  for (const auto& f : data.schema.fields) {
    w.put(f.id);
    w.put(static_cast<std::uint8_t>(f.kind));
    w.put(f.cardinality);
    w.put_string(f.name);
  }
  w.put(static_cast<std::uint64_t>(data.size()));
  w.put_array(std::span<const std::uint32_t>(data.tokens.data(), static_cast<std::size_t>(data.tokens.size())));
  w.put_array(std::span<const std::uint8_t>(data.labels.data(), static_cast<std::size_t>(data.labels.size())));
  detail::write_file(path, w.bytes());
}

Dataset read_dataset(const std::filesystem::path& path) {
  auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  if (r.get_bytes(4) != "SSDS") throw DataError(path.string() + ": not an encoded dataset cache");
  auto version = r.get<std::uint32_t>();
  if (version != kDatasetCacheVersion)
    throw DataError(path.string() + ": unsupported cache version " + std::to_string(version));
  Dataset d;
  auto tag = r.get<std::uint8_t>();
  if (tag > 3) throw DataError(path.string() + ": bad split tag");
  d.split = static_cast<Split>(tag);
  auto m = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < m; ++i) {
    Field f;
    f.id = r.get<std::uint32_t>();
    auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw DataError(path.string() + ": bad field kind");
    f.kind = static_cast<FieldKind>(kind);
    f.cardinality = r.get<std::uint32_t>();
    f.name = r.get_string();
    d.schema.fields.push_back(std::move(f));
  }
  auto n = static_cast<Index>(r.get<std::uint64_t>());
  d.tokens.resize(n, m);
  d.labels.resize(n);
  r.get_array(std::span<std::uint32_t>(d.tokens.data(), static_cast<std::size_t>(d.tokens.size())));
  r.get_array(std::span<std::uint8_t>(d.labels.data(), static_cast<std::size_t>(d.labels.size())));
  if (r.remaining() != 0) throw DataError(path.string() + ": trailing bytes");
  d.validate();
  return d;
}

}  // namespace sseds
