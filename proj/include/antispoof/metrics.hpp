#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/tensor.hpp"

namespace antispoof {

// Fraction of exact matches between predicted and true class ids.
inline double sca(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.size() != truths.size())
    throw MetricError("sca: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(truths.size()) + " truths");
  if (predictions.empty()) throw MetricError("sca: empty input");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Bonafide-vs-spoof score from an N-class probability row: the bonafide
// probability (class 0). For 3-class models this is 1 - (P_TTS + P_VC).
template <typename T>
std::vector<double> merge_to_binary(const Tensor<T>& probs) {
  if (probs.rank() != 2 || probs.dim(1) < 2)
    throw ShapeError("merge_to_binary: expected [B,K>=2] probabilities");
  std::vector<double> scores(static_cast<std::size_t>(probs.dim(0)));
  for (int i = 0; i < probs.dim(0); ++i)
    scores[static_cast<std::size_t>(i)] =
        static_cast<double>(probs.data()[static_cast<std::int64_t>(i) * probs.dim(1)]);
  return scores;
}

struct ScoreRecord {
  std::string utt_id;
  double score = 0.0;      // higher = more bonafide
  bool bonafide = false;
};

namespace detail {

struct SweepPoint {
  double threshold = 0.0;
  double frr = 0.0;  // P_miss of the countermeasure
  double far = 0.0;  // P_fa of the countermeasure
};

// Error rates at every distinct score plus a reject-all (+inf) endpoint.
// Decision rule: bonafide iff score >= threshold. The lowest score is an
// accept-all point, so both default decisions are always in the sweep.
inline std::vector<SweepPoint> sweep_rates(const std::vector<ScoreRecord>& records) {
  std::int64_t n_bona = 0, n_spoof = 0;
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw MetricError("score sweep: non-finite score");
    (r.bonafide ? n_bona : n_spoof) += 1;
  }
  if (n_bona == 0 || n_spoof == 0)
    throw MetricError("score sweep: need at least one bonafide and one spoof record");

  std::vector<std::pair<double, bool>> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.score, r.bonafide);
  std::sort(sorted.begin(), sorted.end());

  std::vector<SweepPoint> points;
  std::int64_t bona_below = 0, spoof_below = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i].first;
    SweepPoint p;
    p.threshold = t;
    p.frr = static_cast<double>(bona_below) / static_cast<double>(n_bona);
    p.far = static_cast<double>(n_spoof - spoof_below) / static_cast<double>(n_spoof);
    points.push_back(p);
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second ? bona_below : spoof_below) += 1;
      ++i;
    }
  }
  SweepPoint reject_all;
  reject_all.threshold = std::numeric_limits<double>::infinity();
  reject_all.frr = 1.0;
  reject_all.far = 0.0;
  points.push_back(reject_all);
  return points;
}

}  // namespace detail

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// EER at the sweep point minimizing |FRR - FAR|, ties to the smaller
// threshold; the rate midpoint is reported (no ROCCH interpolation).
inline EerResult eer(const std::vector<ScoreRecord>& records) {
  const auto points = detail::sweep_rates(records);
  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const double gap = std::abs(p.frr - p.far);
    if (gap < best_gap) {
      best_gap = gap;
      best.eer = (p.frr + p.far) / 2.0;
      best.threshold = p.threshold;
    }
  }
  return best;
}

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

inline std::vector<DetPoint> det_curve(const std::vector<ScoreRecord>& records) {
  std::vector<DetPoint> out;
  for (const auto& p : detail::sweep_rates(records)) out.push_back({p.threshold, p.far, p.frr});
  return out;
}

// ASVspoof 2019 constrained t-DCF constants. Costs/priors are the official
// defaults; the ASV operating rates always come from measurements supplied by
// the caller (no ASV system is built here).
struct TdcfConfig {
  double c_miss_asv = 1.0;
  double c_fa_asv = 10.0;
  double c_miss_cm = 1.0;
  double c_fa_cm = 10.0;
  double pi_tar = 0.9405;
  double pi_non = 0.0095;
  double pi_spoof = 0.05;
  double p_miss_asv = 0.0;
  double p_fa_asv = 0.0;
  double p_miss_spoof_asv = 0.0;

  void validate() const {
    if (c_miss_asv <= 0 || c_fa_asv <= 0 || c_miss_cm <= 0 || c_fa_cm <= 0)
      throw ConfigError("tdcf: costs must be positive");
    if (pi_tar < 0 || pi_non < 0 || pi_spoof < 0 ||
        std::abs(pi_tar + pi_non + pi_spoof - 1.0) > 1e-6)
      throw ConfigError("tdcf: priors must be nonnegative and sum to 1");
    for (double r : {p_miss_asv, p_fa_asv, p_miss_spoof_asv})
      if (r < 0.0 || r > 1.0) throw ConfigError("tdcf: ASV rates must be in [0,1]");
  }

  // Constrained-form weights (original 2019 formulation of ref t-DCF).
  double c1() const {
    return pi_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - pi_non * c_fa_asv * p_fa_asv;
  }
  double c2() const { return c_fa_cm * pi_spoof * (1.0 - p_miss_spoof_asv); }
};

struct TdcfResult {
  double min_tdcf = 0.0;  // normalized
  double threshold = 0.0;
};

inline TdcfResult min_tdcf(const std::vector<ScoreRecord>& records, const TdcfConfig& cfg) {
  cfg.validate();
  const double c1 = cfg.c1();
  const double c2 = cfg.c2();
  if (c1 <= 0.0 || c2 <= 0.0)
    throw ConfigError("tdcf: degenerate weights C1=" + std::to_string(c1) +
                      " C2=" + std::to_string(c2) + "; check costs, priors, and ASV rates");
  const double normalizer = std::min(c1, c2);
  TdcfResult best;
  best.min_tdcf = std::numeric_limits<double>::infinity();
  for (const auto& p : detail::sweep_rates(records)) {
    const double value = (c1 * p.frr + c2 * p.far) / normalizer;
    if (value < best.min_tdcf) {
      best.min_tdcf = value;
      best.threshold = p.threshold;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

inline void write_scores_csv(const std::vector<ScoreRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_scores_csv: cannot open " + path + " for writing");
  f << "utt_id,score,truth\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.score);
    f << r.utt_id << ',' << buf << ',' << (r.bonafide ? "bonafide" : "spoof") << '\n';
  }
  if (!f) throw IoError("write_scores_csv: write failed for " + path);
}

inline std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_scores_csv: cannot open " + path);
  std::vector<ScoreRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("utt_id,", 0) == 0) continue;  // header
    std::istringstream ss(line);
    std::string id, score_s, truth;
    if (!std::getline(ss, id, ',') || !std::getline(ss, score_s, ',') ||
        !std::getline(ss, truth))
      throw FormatError("read_scores_csv: " + path + ":" + std::to_string(line_no) +
                        ": expected 'utt_id,score,truth'");
    ScoreRecord r;
    r.utt_id = id;
    try {
      std::size_t pos = 0;
      r.score = std::stod(score_s, &pos);
      if (pos != score_s.size()) throw std::invalid_argument("junk");
    } catch (const std::exception&) {
      throw FormatError("read_scores_csv: " + path + ":" + std::to_string(line_no) +
                        ": bad score '" + score_s + "'");
    }
    if (truth == "bonafide")
      r.bonafide = true;
    else if (truth == "spoof")
      r.bonafide = false;
    else
      throw FormatError("read_scores_csv: " + path + ":" + std::to_string(line_no) +
                        ": truth must be bonafide or spoof, got '" + truth + "'");
    records.push_back(std::move(r));
  }
  return records;
}

// key=value lines (# comments allowed): p_miss_asv, p_fa_asv,
// p_miss_spoof_asv.
inline void read_asv_rates(const std::string& path, TdcfConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw IoError("read_asv_rates: cannot open " + path);
  std::string line;
  int line_no = 0;
  bool have_miss = false, have_fa = false, have_miss_spoof = false;
  while (std::getline(f, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("read_asv_rates: " + path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    const std::string value_s = line.substr(eq + 1);
    double value = 0.0;
    try {
      value = std::stod(value_s);
    } catch (const std::exception&) {
      throw FormatError("read_asv_rates: " + path + ":" + std::to_string(line_no) +
                        ": bad value '" + value_s + "'");
    }
    if (key == "p_miss_asv") {
      cfg.p_miss_asv = value;
      have_miss = true;
    } else if (key == "p_fa_asv") {
      cfg.p_fa_asv = value;
      have_fa = true;
    } else if (key == "p_miss_spoof_asv") {
      cfg.p_miss_spoof_asv = value;
      have_miss_spoof = true;
    } else {
      throw FormatError("read_asv_rates: " + path + ":" + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  }
  if (!have_miss || !have_fa || !have_miss_spoof)
    throw ConfigError("read_asv_rates: " + path +
                      " must define p_miss_asv, p_fa_asv, and p_miss_spoof_asv");
}

inline void write_det_csv(const std::vector<DetPoint>& points, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_det_csv: cannot open " + path + " for writing");
  f << "threshold,far,frr\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.threshold, p.far, p.frr);
    f << buf;
  }
  if (!f) throw IoError("write_det_csv: write failed for " + path);
}

}  // namespace antispoof
