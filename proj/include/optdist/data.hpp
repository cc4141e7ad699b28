#pragma once

// Dataset schema, CSV ingestion, vocabularies, Z-score normalization,
// train/validation/test splitting and the synthetic ZILN mixture generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "optdist/error.hpp"

namespace optdist {

enum class FeatureKind { categorical, continuous };

struct FeatureDescriptor {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;

  friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

struct FeatureSchema {
  std::vector<FeatureDescriptor> features;
  std::string label = "ltv";
  int horizon_days = 0;  // informational only

  std::size_t num_categorical() const {
    return static_cast<std::size_t>(std::count_if(features.begin(), features.end(), [](const auto& f) {
      return f.kind == FeatureKind::categorical;
    }));
  }
  std::size_t num_continuous() const { return features.size() - num_categorical(); }

  void validate() const {
    require(!features.empty(), "invalid_schema", "schema declares no features");
    std::unordered_set<std::string> seen;
    for (const auto& f : features) {
      require(!f.name.empty(), "invalid_schema", "feature with empty name");
      require(seen.insert(f.name).second, "invalid_schema", "duplicate feature name '" + f.name + "'");
      require(f.name != label, "invalid_schema", "label column '" + label + "' is also listed as a feature");
    }
    require(!label.empty(), "invalid_schema", "schema has no label column");
  }

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.features == b.features && a.label == b.label;
  }
};

/// Human-readable field-level differences between two schemas; empty when compatible.
inline std::vector<std::string> schema_diff(const FeatureSchema& expected, const FeatureSchema& actual) {
  std::vector<std::string> diff;
  if (expected.label != actual.label)
    diff.push_back("label: expected '" + expected.label + "', got '" + actual.label + "'");
  const std::size_t n = std::max(expected.features.size(), actual.features.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= actual.features.size()) {
      diff.push_back("missing feature '" + expected.features[i].name + "'");
    } else if (i >= expected.features.size()) {
      diff.push_back("unexpected feature '" + actual.features[i].name + "'");
    } else {
      const auto& e = expected.features[i];
      const auto& a = actual.features[i];
      if (e.name != a.name)
        diff.push_back("feature " + std::to_string(i) + ": expected '" + e.name + "', got '" + a.name + "'");
      else if (e.kind != a.kind)
        diff.push_back("feature '" + e.name + "': kind differs");
    }
  }
  return diff;
}

/// One parsed row. Categorical and continuous values are each kept in schema order.
struct RawExample {
  std::vector<std::string> categorical;
  std::vector<double> continuous;
  double label = 0.0;
};

struct EncodedExample {
  std::vector<int> categorical;  // index 0 = unknown
  std::vector<double> continuous;
  double label = 0.0;
  int converted = 0;
};

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline std::string format_double(double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace csv

/// Header names of a CSV file (first line).
inline std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io_error", "cannot open '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "csv_error", path + ": empty file");
  return csv::split_line(line);
}

inline std::vector<RawExample> parse_csv(std::istream& in, const FeatureSchema& schema,
                                         const std::string& source = "<stream>") {
  schema.validate();
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "csv_error", source + ": empty file");
  const auto header = csv::split_line(line);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);
  auto locate = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw Error("schema_error", source + ": missing column '" + name + "'");
    return it->second;
  };
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features) feature_cols.push_back(locate(f.name));
  const std::size_t label_col = locate(schema.label);

  std::vector<RawExample> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (fields.size() != header.size())
      throw Error("csv_error", where + "expected " + std::to_string(header.size()) + " fields, found " +
                                   std::to_string(fields.size()));
    RawExample ex;
    for (std::size_t i = 0; i < schema.features.size(); ++i) {
      const std::string& raw = fields[feature_cols[i]];
      if (schema.features[i].kind == FeatureKind::categorical) {
        ex.categorical.push_back(raw);
      } else {
        const auto v = csv::parse_double(raw);
        if (!v) throw Error("csv_error", where + "cannot parse '" + raw + "' for feature '" + schema.features[i].name + "'");
        ex.continuous.push_back(*v);
      }
    }
    const auto y = csv::parse_double(fields[label_col]);
    if (!y) throw Error("csv_error", where + "cannot parse label '" + fields[label_col] + "'");
    if (*y < 0.0) throw Error("csv_error", where + "negative label " + fields[label_col]);
    ex.label = *y;
    rows.push_back(std::move(ex));
  }
  return rows;
}

inline std::vector<RawExample> load_csv(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io_error", "cannot open '" + path + "'");
  return parse_csv(in, schema, path);
}

inline void write_csv(std::ostream& out, const FeatureSchema& schema, std::span<const RawExample> rows) {
  for (std::size_t i = 0; i < schema.features.size(); ++i) out << csv::quote_if_needed(schema.features[i].name) << ',';
  out << csv::quote_if_needed(schema.label) << '\n';
  for (const RawExample& r : rows) {
    std::size_t ci = 0, ni = 0;
    for (const auto& f : schema.features) {
      if (f.kind == FeatureKind::categorical)
        out << csv::quote_if_needed(r.categorical.at(ci++));
      else
        out << csv::format_double(r.continuous.at(ni++));
      out << ',';
    }
    out << csv::format_double(r.label) << '\n';
  }
}

inline void write_csv(const std::string& path, const FeatureSchema& schema, std::span<const RawExample> rows) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io_error", "cannot write '" + path + "'");
  write_csv(out, schema, rows);
  require(static_cast<bool>(out), "io_error", "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Index 0 is reserved for unknown values; the rest follow first occurrence.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) {
    for (auto& t : tokens) add(std::move(t));
  }

  int add(std::string token) {
    const auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size()) + 1;
    index_.emplace(token, id);
    tokens_.push_back(std::move(token));
    return id;
  }

  int lookup(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
  }

  /// Number of table rows, including the unknown row.
  std::size_t size() const { return tokens_.size() + 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline std::vector<Vocabulary> build_vocab(std::span<const RawExample> train, const FeatureSchema& schema) {
  require(!train.empty(), "empty_dataset", "cannot build vocabularies from an empty training split");
  std::vector<Vocabulary> vocabs(schema.num_categorical());
  for (const RawExample& ex : train)
    for (std::size_t i = 0; i < vocabs.size(); ++i) vocabs[i].add(ex.categorical.at(i));
  return vocabs;
}

// ---------------------------------------------------------------------------
// Normalizer

struct FeatureMoments {
  double mean = 0.0;
  double std = 0.0;
};

struct Normalizer {
  std::vector<FeatureMoments> moments;

  double apply(std::size_t feature, double value) const {
    const auto& m = moments.at(feature);
    return m.std > 0.0 ? (value - m.mean) / m.std : 0.0;
  }
};

/// Population (divide-by-n) statistics over the training split.
inline Normalizer fit_normalizer(std::span<const RawExample> train, const FeatureSchema& schema) {
  require(!train.empty(), "empty_dataset", "cannot fit a normalizer on an empty training split");
  const std::size_t k = schema.num_continuous();
  const double n = static_cast<double>(train.size());
  Normalizer norm;
  norm.moments.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    double sum = 0.0;
    for (const auto& ex : train) sum += ex.continuous.at(j);
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& ex : train) {
      const double d = ex.continuous[j] - mean;
      sq += d * d;
    }
    norm.moments[j] = {mean, std::sqrt(sq / n)};
  }
  return norm;
}

inline EncodedExample encode(const RawExample& raw, const std::vector<Vocabulary>& vocabs,
                             const Normalizer& normalizer) {
  EncodedExample ex;
  ex.categorical.reserve(raw.categorical.size());
  for (std::size_t i = 0; i < raw.categorical.size(); ++i) ex.categorical.push_back(vocabs.at(i).lookup(raw.categorical[i]));
  ex.continuous.reserve(raw.continuous.size());
  for (std::size_t j = 0; j < raw.continuous.size(); ++j) ex.continuous.push_back(normalizer.apply(j, raw.continuous[j]));
  ex.label = raw.label;
  ex.converted = raw.label > 0.0 ? 1 : 0;
  return ex;
}

inline std::vector<EncodedExample> encode_all(std::span<const RawExample> rows, const std::vector<Vocabulary>& vocabs,
                                              const Normalizer& normalizer) {
  std::vector<EncodedExample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(encode(r, vocabs, normalizer));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded shuffle, then validation/test take floor(n * r) rows and train takes the rest.
inline SplitIndices split_indices(std::size_t n, std::uint64_t seed, SplitRatios ratios = {}) {
  require(ratios.train > 0.0 && ratios.validation > 0.0 && ratios.test > 0.0, "invalid_config",
          "split ratios must be positive");
  require(std::abs(ratios.train + ratios.validation + ratios.test - 1.0) < 1e-9, "invalid_config",
          "split ratios must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.validation + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.test + 1e-9));
  const std::size_t n_train = n - n_val - n_test;
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

template <class T>
struct Splits {
  std::vector<T> train, validation, test;
};

template <class T>
Splits<T> split(std::span<const T> data, std::uint64_t seed, SplitRatios ratios = {}) {
  const SplitIndices idx = split_indices(data.size(), seed, ratios);
  Splits<T> out;
  for (auto i : idx.train) out.train.push_back(data[i]);
  for (auto i : idx.validation) out.validation.push_back(data[i]);
  for (auto i : idx.test) out.test.push_back(data[i]);
  return out;
}

/// Everything needed to turn raw rows into model inputs; fitted on train only.
struct Preprocessor {
  FeatureSchema schema;
  std::vector<Vocabulary> vocabs;
  Normalizer normalizer;

  static Preprocessor fit(const FeatureSchema& schema, std::span<const RawExample> train) {
    return {schema, build_vocab(train, schema), fit_normalizer(train, schema)};
  }

  std::vector<EncodedExample> operator()(std::span<const RawExample> rows) const {
    return encode_all(rows, vocabs, normalizer);
  }
};

// ---------------------------------------------------------------------------
// Synthetic zero-inflated lognormal mixture

struct ClusterSpec {
  double conversion_prob = 0.5;
  double log_mean = 0.0;
  double log_scale = 1.0;
  double prior = 1.0;
};

struct SyntheticConfig {
  std::vector<ClusterSpec> clusters;
  std::size_t n = 0;
  double feature_noise = 0.0;  // probability the cluster token is replaced by a wrong one
  double center_radius = 2.0;  // continuous feature means sit on a circle of this radius
  std::uint64_t seed = 0;

  void validate() const {
    require(!clusters.empty(), "invalid_config", "synthetic config needs at least one cluster");
    require(n >= 1, "invalid_config", "synthetic sample count must be >= 1");
    require(feature_noise >= 0.0 && feature_noise <= 1.0, "invalid_config", "feature noise must lie in [0, 1]");
    double total = 0.0;
    for (const auto& c : clusters) {
      require(c.conversion_prob >= 0.0 && c.conversion_prob <= 1.0, "invalid_config",
              "conversion probability must lie in [0, 1]");
      require(c.log_scale > 0.0 && std::isfinite(c.log_scale), "invalid_config", "lognormal scale must be > 0");
      require(std::isfinite(c.log_mean), "invalid_config", "lognormal location must be finite");
      require(c.prior >= 0.0, "invalid_config", "cluster prior must be non-negative");
      total += c.prior;
    }
    require(std::abs(total - 1.0) < 1e-9, "invalid_config", "cluster priors must sum to 1");
  }

  /// Four well-separated clusters used by the benchmark suite.
  static SyntheticConfig four_clusters(std::size_t n, std::uint64_t seed) {
    SyntheticConfig c;
    c.clusters = {{0.05, 0.0, 0.5, 0.25}, {0.2, 1.0, 0.5, 0.25}, {0.5, 2.0, 0.5, 0.25}, {0.9, 3.0, 0.5, 0.25}};
    c.n = n;
    c.feature_noise = 0.05;
    c.seed = seed;
    return c;
  }
};

struct SyntheticData {
  FeatureSchema schema;
  std::vector<RawExample> examples;
  std::vector<int> clusters;  // hidden, for evaluation only
};

inline FeatureSchema synthetic_schema() {
  FeatureSchema s;
  s.features = {{"segment", FeatureKind::categorical}, {"x1", FeatureKind::continuous}, {"x2", FeatureKind::continuous}};
  s.label = "ltv";
  s.horizon_days = 30;
  return s;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t k = config.clusters.size();
  constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> cumulative(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) cumulative[i] = (acc += config.clusters[i].prior);

  SyntheticData data;
  data.schema = synthetic_schema();
  data.examples.reserve(config.n);
  data.clusters.reserve(config.n);
  for (std::size_t row = 0; row < config.n; ++row) {
    const double u = unit(rng) * acc;
    std::size_t cluster = 0;
    while (cluster + 1 < k && u >= cumulative[cluster]) ++cluster;
    const ClusterSpec& spec = config.clusters[cluster];

    std::size_t token = cluster;
    if (k > 1 && unit(rng) < config.feature_noise) {
      const auto offset = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(k - 1)) % (k - 1);
      token = (cluster + offset) % k;
    }
    const double angle = 2.0 * kPi * static_cast<double>(cluster) / static_cast<double>(k);
    RawExample ex;
    ex.categorical.push_back("c" + std::to_string(token));
    ex.continuous.push_back(config.center_radius * std::cos(angle) + normal(rng));
    ex.continuous.push_back(config.center_radius * std::sin(angle) + normal(rng));
    const bool converts = unit(rng) < spec.conversion_prob;
    const double z = normal(rng);
    ex.label = converts ? std::exp(spec.log_mean + spec.log_scale * z) : 0.0;
    data.examples.push_back(std::move(ex));
    data.clusters.push_back(static_cast<int>(cluster));
  }
  return data;
}

}  // namespace optdist
