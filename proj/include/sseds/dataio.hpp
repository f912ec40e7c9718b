#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sseds/common.hpp"

namespace sseds {

enum class FieldKind : std::uint8_t { categorical = 0, numeric = 1 };

struct Field {
  std::uint32_t id = 0;
  FieldKind kind = FieldKind::categorical;
  std::string name;
  std::uint32_t cardinality = 0;  // n_i, the encoded vocabulary size

  bool operator==(const Field&) const = default;
};

struct FieldSchema {
  std::vector<Field> fields;

  std::size_t size() const { return fields.size(); }
  std::vector<std::uint32_t> cardinalities() const;
  // Ids must be 0..m-1 in order and every cardinality positive.
  void validate() const;

  bool operator==(const FieldSchema&) const = default;
};

/// Token -> id map for one field. Id 0 is the "others" bucket that absorbs
/// low-frequency, missing and unseen tokens.
class Vocabulary {
 public:
  static constexpr std::uint32_t kOthers = 0;
  static constexpr std::string_view kOthersToken = "<others>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> surviving);

  std::uint32_t lookup(std::string_view token) const;
  std::uint32_t size() const { return static_cast<std::uint32_t>(tokens_.size()); }
  // id -> token, with tokens()[0] == kOthersToken.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

/// Builds a field vocabulary from training tokens. Empty strings count as
/// missing and always land in "others".
Vocabulary build_vocab(std::span<const std::string> stream, std::uint32_t min_freq);

enum class LogBase { natural, binary };

inline constexpr std::int64_t kNegativeBucket = -1;

/// Discretizes a raw numeric value: floor(x) for 0 <= x <= 2, floor(log(x)^2)
/// above, kNegativeBucket for negatives.
std::int64_t transform_numeric(double x, LogBase base = LogBase::natural);
std::string numeric_token(double x, LogBase base = LogBase::natural);

struct Record {
  std::vector<std::uint32_t> tokens;
  std::uint8_t label = 0;
};

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2, none = 3 };
std::string_view to_string(Split s);

using TokenMatrix = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

/// Encoded records stored row-major: tokens(r, i) is the id of field i.
struct Dataset {
  FieldSchema schema;
  TokenMatrix tokens;
  LabelVector labels;
  Split split = Split::none;

  std::size_t size() const { return static_cast<std::size_t>(tokens.rows()); }
  Record record(std::size_t r) const;
  Dataset subset(std::span<const std::size_t> rows, Split tag) const;
  void validate() const;
  double positive_rate() const;
};

struct Batch {
  TokenMatrix tokens;
  LabelVector labels;
  std::size_t index = 0;

  Index size() const { return tokens.rows(); }
  static Batch whole(const Dataset& data);
  static Batch from_records(std::span<const Record> records);
};

/// Deterministic permuted split with largest-remainder sizing.
std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> ratios,
                                                      std::uint64_t seed);
std::array<Dataset, 3> split(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed);

/// Epoch plan over a dataset. Batches are materialized on access.
class BatchPlan {
 public:
  BatchPlan(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  std::size_t size() const { return batches_; }
  Batch operator[](std::size_t k) const;
  std::span<const std::size_t> order() const { return order_; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::size_t batches_;
  std::vector<std::size_t> order_;
};

BatchPlan batch_iter(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle);

// ---------------------------------------------------------------------------
// Synthetic planted-signal data.

struct SynthSpec {
  std::vector<std::uint32_t> cardinalities;
  std::size_t records = 0;
  // m x r non-negative strengths; interaction between fields i and j along
  // latent dimension k is profile(i,k) * profile(j,k).
  Eigen::MatrixXd profile;
  double linear_scale = 0.0;  // std of per-token main effects
  double bias = 0.0;
  double zipf_exponent = 0.0;  // token popularity skew, 0 = uniform
  bool deterministic_labels = false;  // label = [logit > 0]

  void validate() const;
};

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Raw log formats.

struct RawRows {
  std::vector<Field> fields;  // cardinality unset
  std::vector<std::vector<std::string>> rows;
  std::vector<std::uint8_t> labels;
  std::size_t skipped = 0;
};

/// Criteo TSV: label, 13 numeric, 26 categorical. `strict` throws on a
/// malformed line, otherwise the line is skipped and counted.
RawRows read_criteo(std::istream& in, bool strict, LogBase base = LogBase::natural);
/// Avazu CSV with header: id, click, then 22 categorical columns.
RawRows read_avazu(std::istream& in, bool strict);

struct EncodedData {
  std::array<Dataset, 3> splits;
  std::vector<Vocabulary> vocabularies;
};

/// Splits raw rows, builds vocabularies on the training part and encodes all
/// three partitions.
EncodedData encode(const RawRows& raw, std::array<double, 3> ratios, std::uint32_t min_freq,
                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Encoded dataset cache ("SSDS").

inline constexpr std::uint32_t kDatasetCacheVersion = 1;

void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace sseds
