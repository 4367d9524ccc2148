#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embshap/detail/text.hpp"
#include "embshap/error.hpp"
#include "embshap/types.hpp"

namespace embshap {

enum class TargetKind { continuous, binary };

inline std::string to_string(TargetKind kind) {
  return kind == TargetKind::binary ? "binary" : "continuous";
}

inline TargetKind target_kind_from_string(std::string_view s) {
  if (s == "binary") return TargetKind::binary;
  if (s == "continuous") return TargetKind::continuous;
  throw ValidationError("unknown target_kind '" + std::string(s) + "'");
}

namespace detail {

inline void require_finite(const Matrix& m, std::string_view what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw ValidationError(std::string(what) + ": non-finite value at row " +
                              std::to_string(r) + ", column " + std::to_string(c));
      }
    }
  }
}

}  // namespace detail

/// N embeddings of dimension D, one target per row, and the speaker each row
/// belongs to. Immutable once constructed; the constructor enforces every
/// invariant.
class Dataset {
 public:
  Dataset(Matrix embeddings, Vector targets, std::vector<std::string> speaker_ids,
          TargetKind kind, std::string target_name)
      : embeddings_(std::move(embeddings)),
        targets_(std::move(targets)),
        speaker_ids_(std::move(speaker_ids)),
        kind_(kind),
        target_name_(std::move(target_name)) {
    if (embeddings_.rows() < 1 || embeddings_.cols() < 1) {
      throw ValidationError("dataset needs at least one row and one dimension");
    }
    if (targets_.size() != embeddings_.rows()) {
      throw ValidationError("target count " + std::to_string(targets_.size()) +
                            " does not match row count " +
                            std::to_string(embeddings_.rows()));
    }
    if (static_cast<Eigen::Index>(speaker_ids_.size()) != embeddings_.rows()) {
      throw ValidationError("speaker id count does not match row count");
    }
    detail::require_finite(embeddings_, "embeddings");
    for (Eigen::Index i = 0; i < targets_.size(); ++i) {
      if (!std::isfinite(targets_[i])) {
        throw ValidationError("non-finite target at row " + std::to_string(i));
      }
      if (kind_ == TargetKind::binary && targets_[i] != 0.0 && targets_[i] != 1.0) {
        throw ValidationError("binary target at row " + std::to_string(i) +
                              " is " + detail::format_g17(targets_[i]) +
                              ", expected 0 or 1");
      }
    }
  }

  const Matrix& embeddings() const { return embeddings_; }
  const Vector& targets() const { return targets_; }
  const std::vector<std::string>& speaker_ids() const { return speaker_ids_; }
  TargetKind target_kind() const { return kind_; }
  const std::string& target_name() const { return target_name_; }

  Eigen::Index size() const { return embeddings_.rows(); }
  Eigen::Index dim() const { return embeddings_.cols(); }

  /// Distinct speaker ids in lexicographic order.
  std::vector<std::string> speakers() const {
    std::set<std::string> unique(speaker_ids_.begin(), speaker_ids_.end());
    return {unique.begin(), unique.end()};
  }

  Dataset subset(const std::vector<Eigen::Index>& rows) const {
    Matrix emb(static_cast<Eigen::Index>(rows.size()), dim());
    Vector tgt(static_cast<Eigen::Index>(rows.size()));
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = rows[k];
      emb.row(static_cast<Eigen::Index>(k)) = embeddings_.row(r);
      tgt[static_cast<Eigen::Index>(k)] = targets_[r];
      ids.push_back(speaker_ids_[static_cast<std::size_t>(r)]);
    }
    return Dataset(std::move(emb), std::move(tgt), std::move(ids), kind_, target_name_);
  }

  /// Rows whose speaker is in `keep`, original order preserved.
  Dataset with_speakers(const std::set<std::string>& keep) const {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < size(); ++r) {
      if (keep.count(speaker_ids_[static_cast<std::size_t>(r)])) rows.push_back(r);
    }
    if (rows.empty()) throw ValidationError("speaker selection matches no rows");
    return subset(rows);
  }

  /// Same rows with the targets replaced; used for relabeling experiments.
  Dataset with_targets(Vector targets, TargetKind kind) const {
    return Dataset(embeddings_, std::move(targets), speaker_ids_, kind, target_name_);
  }

  bool operator==(const Dataset& other) const {
    return kind_ == other.kind_ && target_name_ == other.target_name_ &&
           speaker_ids_ == other.speaker_ids_ && embeddings_ == other.embeddings_ &&
           targets_ == other.targets_;
  }

 private:
  Matrix embeddings_;
  Vector targets_;
  std::vector<std::string> speaker_ids_;
  TargetKind kind_;
  std::string target_name_;
};

/// Reference samples used to stand in for absent features.
class BackgroundSet {
 public:
  explicit BackgroundSet(Matrix samples) : samples_(std::move(samples)) {
    if (samples_.rows() < 1 || samples_.cols() < 1) {
      throw ValidationError("background set needs at least one sample");
    }
    detail::require_finite(samples_, "background");
  }

  const Matrix& samples() const { return samples_; }
  Eigen::Index size() const { return samples_.rows(); }
  Eigen::Index dim() const { return samples_.cols(); }
  RowVector mean() const { return samples_.colwise().mean(); }

 private:
  Matrix samples_;
};

/// `count` rows drawn without replacement (all rows when count >= N), in
/// ascending row order.
inline BackgroundSet sample_background(const Dataset& data, Eigen::Index count, Seed seed) {
  if (count < 1) throw ValidationError("background size must be positive");
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(data.size()));
  for (Eigen::Index i = 0; i < data.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  if (count < data.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(count));
    std::sort(rows.begin(), rows.end());
  }
  Matrix samples(static_cast<Eigen::Index>(rows.size()), data.dim());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    samples.row(static_cast<Eigen::Index>(k)) = data.embeddings().row(rows[k]);
  }
  return BackgroundSet(std::move(samples));
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticTask { regression, classification };

struct SyntheticSpec {
  int n_speakers = 300;
  int utterances_per_speaker = 10;
  int dim = 64;
  std::vector<int> informative_dims = {0, 1, 2};
  SyntheticTask task = SyntheticTask::regression;
  double noise_std = 0.1;
  /// Classification only: speaker means are pushed apart along the planted
  /// direction so that the two classes' scores are separated by this gap.
  double class_margin = 0.0;
  Seed seed = 0;
  std::string target_name = "target";

  void validate() const {
    if (n_speakers < 1) throw ValidationError("n_speakers must be positive");
    if (utterances_per_speaker < 1) {
      throw ValidationError("utterances_per_speaker must be positive");
    }
    if (dim < 1) throw ValidationError("dim must be positive");
    if (informative_dims.empty()) throw ValidationError("informative_dims is empty");
    std::set<int> seen;
    for (int d : informative_dims) {
      if (d < 0 || d >= dim) {
        throw ValidationError("informative dim " + std::to_string(d) + " out of range");
      }
      if (!seen.insert(d).second) {
        throw ValidationError("informative dim " + std::to_string(d) + " repeated");
      }
    }
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw ValidationError("noise_std must be a nonnegative real");
    }
    if (!(class_margin >= 0.0) || !std::isfinite(class_margin)) {
      throw ValidationError("class_margin must be a nonnegative real");
    }
  }
};

/// The fixed unit-norm direction the synthetic target is read from: equal
/// magnitudes over the informative dims with alternating signs.
inline Vector planted_direction(const SyntheticSpec& spec) {
  Vector w = Vector::Zero(spec.dim);
  const double mag = 1.0 / std::sqrt(static_cast<double>(spec.informative_dims.size()));
  for (std::size_t k = 0; k < spec.informative_dims.size(); ++k) {
    w[spec.informative_dims[k]] = (k % 2 == 0) ? mag : -mag;
  }
  return w;
}

inline std::string speaker_label(int index, int n_speakers) {
  int width = 4;
  for (int n = n_speakers - 1; n >= 10000; n /= 10) ++width;
  std::string digits = std::to_string(index);
  return "spk" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') +
         digits;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Vector w = planted_direction(spec);
  Matrix means(spec.n_speakers, spec.dim);
  for (Eigen::Index s = 0; s < means.rows(); ++s) {
    for (Eigen::Index d = 0; d < means.cols(); ++d) means(s, d) = normal(rng);
  }
  Vector score = means * w;

  Vector speaker_label_value = Vector::Zero(spec.n_speakers);
  if (spec.task == SyntheticTask::classification) {
    std::vector<double> sorted(score.data(), score.data() + score.size());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    for (Eigen::Index s = 0; s < score.size(); ++s) {
      speaker_label_value[s] = score[s] > median ? 1.0 : 0.0;
      const double push = (speaker_label_value[s] > 0.5 ? 0.5 : -0.5) * spec.class_margin;
      means.row(s) += push * w.transpose();
    }
  }

  const Eigen::Index n_rows =
      static_cast<Eigen::Index>(spec.n_speakers) * spec.utterances_per_speaker;
  Matrix emb(n_rows, spec.dim);
  Vector tgt(n_rows);
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n_rows));
  Eigen::Index row = 0;
  for (int s = 0; s < spec.n_speakers; ++s) {
    const std::string id = speaker_label(s, spec.n_speakers);
    for (int u = 0; u < spec.utterances_per_speaker; ++u, ++row) {
      for (Eigen::Index d = 0; d < spec.dim; ++d) {
        emb(row, d) = means(s, d) + spec.noise_std * normal(rng);
      }
      if (spec.task == SyntheticTask::regression) {
        tgt[row] = score[s] + spec.noise_std * normal(rng);
      } else {
        tgt[row] = speaker_label_value[s];
      }
      ids.push_back(id);
    }
  }
  return Dataset(std::move(emb), std::move(tgt), std::move(ids),
                 spec.task == SyntheticTask::regression ? TargetKind::continuous
                                                         : TargetKind::binary,
                 spec.target_name);
}

// ---------------------------------------------------------------------------
// Speaker-disjoint holdout

struct SpeakerSplit {
  Dataset train;
  Dataset test;
};

/// Speakers are sorted, shuffled with `seed`, and the first
/// round(train_fraction * n_speakers) go to training. Both sides keep at least
/// one speaker.
inline std::pair<std::set<std::string>, std::set<std::string>> partition_speakers(
    const Dataset& data, double train_fraction, Seed seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train fraction must lie in (0, 1)");
  }
  std::vector<std::string> speakers = data.speakers();
  if (speakers.size() < 2) {
    throw ValidationError("speaker split needs at least two distinct speakers");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(speakers.begin(), speakers.end(), rng);
  const auto n = static_cast<long>(speakers.size());
  const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
  std::set<std::string> train(speakers.begin(), speakers.begin() + n_train);
  std::set<std::string> test(speakers.begin() + n_train, speakers.end());
  return {std::move(train), std::move(test)};
}

inline SpeakerSplit split_by_speaker(const Dataset& data, double train_fraction, Seed seed) {
  auto [train, test] = partition_speakers(data, train_fraction, seed);
  return {data.with_speakers(train), data.with_speakers(test)};
}

// ---------------------------------------------------------------------------
// File formats

enum class DataFormat { csv, json };

inline DataFormat data_format_from_string(std::string_view s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "json") return DataFormat::json;
  throw UsageError("unknown format '" + std::string(s) + "' (expected csv or json)");
}

inline std::string to_string(DataFormat f) { return f == DataFormat::csv ? "csv" : "json"; }

inline DataFormat data_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return DataFormat::csv;
  if (ext == ".json") return DataFormat::json;
  throw UsageError("cannot infer data format from '" + path.string() + "'");
}

namespace detail {

inline double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  field = trim(field);
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ParseError("column " + std::string(column) + ": '" + std::string(field) +
                         "' is not a number",
                     line);
  }
  return value;
}

}  // namespace detail

/// CSV with header `speaker_id,target,e0,...,e{D-1}`. The CSV carries no
/// target kind; pass one, or let it be inferred (binary iff every target is 0
/// or 1).
inline Dataset parse_csv(std::string_view text, std::string target_name,
                         std::optional<TargetKind> kind = std::nullopt) {
  std::vector<std::string_view> lines = detail::split(text, '\n');
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("empty file", 1);

  const auto header = detail::split(detail::trim(lines[0]), ',');
  if (header.size() < 3 || detail::trim(header[0]) != "speaker_id" ||
      detail::trim(header[1]) != "target") {
    throw ParseError("header must be speaker_id,target,e0,...", 1);
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t d = 0; d < dim; ++d) {
    if (detail::trim(header[d + 2]) != "e" + std::to_string(d)) {
      throw ParseError("expected column e" + std::to_string(d), 1);
    }
  }

  const std::size_t n = lines.size() - 1;
  if (n == 0) throw ParseError("no records", 2);
  Matrix emb(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  Vector tgt(static_cast<Eigen::Index>(n));
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 2;
    const auto fields = detail::split(detail::trim(lines[i + 1]), ',');
    if (fields.size() != dim + 2) {
      throw ParseError("expected " + std::to_string(dim + 2) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const auto id = detail::trim(fields[0]);
    if (id.empty()) throw ParseError("empty speaker_id", line_no);
    ids.emplace_back(id);
    tgt[static_cast<Eigen::Index>(i)] = detail::parse_number(fields[1], line_no, "target");
    for (std::size_t d = 0; d < dim; ++d) {
      emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) =
          detail::parse_number(fields[d + 2], line_no, "e" + std::to_string(d));
    }
  }
  if (!kind) {
    const bool all01 = (tgt.array() == 0.0 || tgt.array() == 1.0).all();
    kind = all01 ? TargetKind::binary : TargetKind::continuous;
  }
  return Dataset(std::move(emb), std::move(tgt), std::move(ids), *kind, std::move(target_name));
}

inline std::string to_csv(const Dataset& data) {
  std::ostringstream out;
  out << "speaker_id,target";
  for (Eigen::Index d = 0; d < data.dim(); ++d) out << ",e" << d;
  out << '\n';
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    const auto& id = data.speaker_ids()[static_cast<std::size_t>(r)];
    if (id.find_first_of(",\n\r") != std::string::npos) {
      throw ValidationError("speaker id '" + id + "' cannot be written to CSV");
    }
    out << id << ',' << detail::format_g17(data.targets()[r]);
    for (Eigen::Index d = 0; d < data.dim(); ++d) {
      out << ',' << detail::format_g17(data.embeddings()(r, d));
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const Dataset& data) {
  nlohmann::json records = nlohmann::json::array();
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    std::vector<double> e(data.embeddings().row(r).begin(), data.embeddings().row(r).end());
    records.push_back({{"speaker_id", data.speaker_ids()[static_cast<std::size_t>(r)]},
                       {"target", data.targets()[r]},
                       {"embedding", std::move(e)}});
  }
  return {{"target_kind", to_string(data.target_kind())},
          {"target_name", data.target_name()},
          {"records", std::move(records)}};
}

inline Dataset dataset_from_json(const nlohmann::json& doc) {
  try {
    const auto kind = target_kind_from_string(doc.at("target_kind").get<std::string>());
    auto name = doc.at("target_name").get<std::string>();
    const auto& records = doc.at("records");
    if (!records.is_array() || records.empty()) {
      throw ParseError("records must be a nonempty array", 0);
    }
    const std::size_t dim = records[0].at("embedding").size();
    Matrix emb(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(dim));
    Vector tgt(static_cast<Eigen::Index>(records.size()));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& rec = records[i];
      const auto& e = rec.at("embedding");
      if (e.size() != dim) {
        throw ParseError("record " + std::to_string(i) + " has " + std::to_string(e.size()) +
                             " embedding entries, expected " + std::to_string(dim),
                         0);
      }
      ids.push_back(rec.at("speaker_id").get<std::string>());
      tgt[static_cast<Eigen::Index>(i)] = rec.at("target").get<double>();
      for (std::size_t d = 0; d < dim; ++d) {
        emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = e[d].get<double>();
      }
    }
    return Dataset(std::move(emb), std::move(tgt), std::move(ids), kind, std::move(name));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed dataset JSON: ") + ex.what(), 0);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Dataset load_dataset(const std::filesystem::path& path, DataFormat format,
                            std::optional<TargetKind> csv_kind = std::nullopt) {
  const std::string text = read_file(path);
  if (format == DataFormat::csv) return parse_csv(text, path.stem().string(), csv_kind);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ParseError(std::string("invalid JSON: ") + ex.what(), 0);
  }
  return dataset_from_json(doc);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, data_format_from_path(path));
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& path,
                         DataFormat format) {
  if (format == DataFormat::csv) {
    write_file(path, to_csv(data));
  } else {
    write_file(path, to_json(data).dump(1) + "\n");
  }
}

}  // namespace embshap
