#include <cmath>
#include <set>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sseds/dataio.hpp"
#include "sseds/detail/bytes.hpp"
#include "support.hpp"

using namespace sseds;

TEST_CASE("vocabulary merges rare tokens into others") {
  std::vector<std::string> stream;
  for (int i = 0; i < 12; ++i) stream.push_back("a");
  for (int i = 0; i < 3; ++i) stream.push_back("b");
  for (int i = 0; i < 3; ++i) stream.push_back("c");

  auto v = build_vocab(stream, 10);
  CHECK(v.size() == 2);
  CHECK(v.lookup("a") != Vocabulary::kOthers);
  CHECK(v.lookup("b") == Vocabulary::kOthers);
  CHECK(v.lookup("c") == Vocabulary::kOthers);
  CHECK(v.lookup("never seen") == Vocabulary::kOthers);
  CHECK(v.tokens()[0] == Vocabulary::kOthersToken);
}

TEST_CASE("token seen min_freq - 1 times maps to others") {
  std::vector<std::string> stream(9, "x");
  stream.insert(stream.end(), 10, "y");
  auto v = build_vocab(stream, 10);
  CHECK(v.lookup("x") == Vocabulary::kOthers);
  CHECK(v.lookup("y") == 1);
}

TEST_CASE("min_freq 1 gives every distinct token its own id") {
  std::vector<std::string> stream{"q", "p", "q", "r"};
  auto v = build_vocab(stream, 1);
  CHECK(v.size() == 4);
  std::set<std::uint32_t> ids{v.lookup("p"), v.lookup("q"), v.lookup("r")};
  CHECK(ids.size() == 3);
  CHECK(ids.count(Vocabulary::kOthers) == 0);
}

TEST_CASE("missing values land in others and empty streams are rejected") {
  std::vector<std::string> stream{"", "", "", "a"};
  auto v = build_vocab(stream, 1);
  CHECK(v.size() == 2);
  CHECK(v.lookup("") == Vocabulary::kOthers);
  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 1), DataError);
}

TEST_CASE("numeric transform") {
  CHECK(transform_numeric(1.0) == 1);
  CHECK(transform_numeric(0.0) == 0);
  CHECK(transform_numeric(2.0) == 2);
  CHECK(transform_numeric(std::exp(2.0) + 1e-9) == 4);
  CHECK(transform_numeric(100.0) == 21);
  CHECK(transform_numeric(-3.0) == kNegativeBucket);
  CHECK(transform_numeric(1024.0, LogBase::binary) == 100);
  CHECK_THROWS_AS(transform_numeric(std::nan("")), DataError);
  CHECK_THROWS_AS(transform_numeric(INFINITY), DataError);
  CHECK_THROWS_AS(transform_numeric(-INFINITY), DataError);
  CHECK(numeric_token(-1.0) != numeric_token(0.0));
}

TEST_CASE("numeric transform is monotone above the threshold") {
  // the log branch restarts near 0 just past x = 2, so monotonicity only holds within it
  CHECK(transform_numeric(2.1) == 0);
  std::int64_t prev = transform_numeric(2.0001);
  for (double x = 2.0001; x < 1e6; x *= 1.07) {
    auto b = transform_numeric(x);
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("split sizes and determinism") {
  auto a = split_indices(10, {8, 1, 1}, 0);
  CHECK(a[0].size() == 8);
  CHECK(a[1].size() == 1);
  CHECK(a[2].size() == 1);
  auto b = split_indices(100, {8, 1, 1}, 5);
  CHECK(b[0].size() == 80);
  CHECK(b[1].size() == 10);
  CHECK(b[2].size() == 10);
  CHECK(split_indices(100, {8, 1, 1}, 5) == b);

  std::set<std::size_t> all;
  for (const auto& part : b) all.insert(part.begin(), part.end());
  CHECK(all.size() == 100);

  CHECK_THROWS_AS(split_indices(2, {8, 1, 1}, 0), DataError);
  CHECK_THROWS(split_indices(10, {8, 0, 1}, 0));
}

TEST_CASE("batch iteration") {
  Dataset d;
  d.schema = testing::schema_of({5});
  d.tokens.resize(5, 1);
  d.labels.resize(5);
  for (Index r = 0; r < 5; ++r) {
    d.tokens(r, 0) = static_cast<std::uint32_t>(r);
    d.labels(r) = static_cast<std::uint8_t>(r % 2);
  }

  auto plan = batch_iter(d, 2, 0, false);
  REQUIRE(plan.size() == 3);
  CHECK(plan[0].size() == 2);
  CHECK(plan[1].size() == 2);
  CHECK(plan[2].size() == 1);
  for (std::size_t k = 0; k < 3; ++k)
    for (Index r = 0; r < plan[k].size(); ++r) CHECK(plan[k].tokens(r, 0) == k * 2 + static_cast<std::size_t>(r));

  auto s1 = batch_iter(d, 2, 9, true);
  auto s2 = batch_iter(d, 2, 9, true);
  CHECK(std::equal(s1.order().begin(), s1.order().end(), s2.order().begin()));
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.cardinalities = {5, 5, 5};
  spec.records = 1000;
  spec.profile = Eigen::MatrixXd::Ones(3, 2);
  auto data = synth_generate(spec, 4);
  CHECK(data.size() == 1000);
  data.validate();
  double rate = data.positive_rate();
  CHECK(rate > 0.0);
  CHECK(rate < 1.0);

  auto again = synth_generate(spec, 4);
  CHECK(again.tokens == data.tokens);
  CHECK(again.labels == data.labels);

  SynthSpec bad = spec;
  bad.profile = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS(synth_generate(bad, 0));
  bad = spec;
  bad.cardinalities = {};
  CHECK_THROWS(synth_generate(bad, 0));
}

TEST_CASE("zipf skew concentrates tokens") {
  SynthSpec spec;
  spec.cardinalities = {50, 50};
  spec.records = 5000;
  spec.profile = Eigen::MatrixXd::Zero(2, 1);
  spec.zipf_exponent = 1.2;
  auto data = synth_generate(spec, 1);
  std::vector<int> counts(50, 0);
  for (Index r = 0; r < data.tokens.rows(); ++r) ++counts[data.tokens(r, 0)];
  CHECK(*std::max_element(counts.begin(), counts.end()) > 5000 / 50 * 5);
}

TEST_CASE("criteo rows parse into 39 fields and a label") {
  std::string line = "1";
  for (int i = 0; i < 13; ++i) line += "\t" + std::to_string(i * 10);
  for (int i = 0; i < 26; ++i) line += "\tc" + std::to_string(i);
  std::istringstream in(line + "\n" + line + "\n");
  auto raw = read_criteo(in, true);
  REQUIRE(raw.rows.size() == 2);
  CHECK(raw.fields.size() == 39);
  CHECK(raw.rows[0].size() == 39);
  CHECK(raw.labels[0] == 1);
  CHECK(raw.fields[0].kind == FieldKind::numeric);
  CHECK(raw.fields[38].kind == FieldKind::categorical);
  // 100 -> floor(ln(100)^2) = 21
  CHECK(raw.rows[0][10] == numeric_token(100.0));
}

TEST_CASE("criteo strict mode names the bad line, lenient mode counts it") {
  std::string good = "0";
  for (int i = 0; i < 39; ++i) good += "\t";
  std::string text = good + "\n" + "1\t2\t3\n" + good + "\n";
  {
    std::istringstream in(text);
    try {
      read_criteo(in, true);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  std::istringstream in(text);
  auto raw = read_criteo(in, false);
  CHECK(raw.rows.size() == 2);
  CHECK(raw.skipped == 1);
}

TEST_CASE("avazu rows parse with a header") {
  std::string header = "id,click";
  for (int i = 0; i < 22; ++i) header += ",c" + std::to_string(i);
  std::string row = "7,1";
  for (int i = 0; i < 22; ++i) row += ",v" + std::to_string(i);
  std::istringstream in(header + "\n" + row + "\n");
  auto raw = read_avazu(in, true);
  REQUIRE(raw.rows.size() == 1);
  CHECK(raw.fields.size() == 22);
  CHECK(raw.labels[0] == 1);
}

TEST_CASE("encode builds vocabularies on the training split only") {
  RawRows raw;
  raw.fields = {{0, FieldKind::categorical, "a", 0}, {1, FieldKind::categorical, "b", 0}};
  for (int r = 0; r < 100; ++r) {
    raw.rows.push_back({"t" + std::to_string(r % 3), "u" + std::to_string(r)});
    raw.labels.push_back(static_cast<std::uint8_t>(r % 2));
  }
  auto enc = encode(raw, {8, 1, 1}, 2, 3);
  CHECK(enc.splits[0].size() == 80);
  CHECK(enc.vocabularies[0].size() == 4);
  // every "u" token is unique, so all of them are rare
  CHECK(enc.vocabularies[1].size() == 1);
  for (const auto& part : enc.splits) part.validate();
}

TEST_CASE("dataset cache round trip") {
  testing::TempDir dir("cache");
  SynthSpec spec;
  spec.cardinalities = {4, 6};
  spec.records = 50;
  spec.profile = Eigen::MatrixXd::Ones(2, 1);
  auto data = synth_generate(spec, 2);
  data.split = Split::valid;
  auto path = dir.path() / "d.ssds";
  write_dataset(path, data);
  auto back = read_dataset(path);
  CHECK(back.schema == data.schema);
  CHECK(back.tokens == data.tokens);
  CHECK(back.labels == data.labels);
  CHECK(back.split == Split::valid);

  auto bytes = sseds::detail::read_file(path);
  bytes.resize(bytes.size() / 2);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(read_dataset(path), DataError);
}
