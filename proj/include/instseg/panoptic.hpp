#pragma once

// Instance matching and panoptic scores with DSC in place of IoU.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "instseg/grid.hpp"
#include "instseg/instances.hpp"

namespace instseg {

/// 2|a & b| / (|a| + |b|), 1 when both masks are empty.
double mask_dsc(const BinaryMask& a, const BinaryMask& b);

/// Sparse pairwise DSC between predicted (rows) and reference (cols)
/// components. Indices are 0-based: row i is predicted component i + 1.
struct DscEntry {
  int pred = 0;
  int gt = 0;
  double dsc = 0.0;
};

struct DscMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<DscEntry> entries;  // nonzero entries, sorted by (pred, gt)

  double at(int pred, int gt) const;
  std::vector<double> dense() const;  // row-major rows x cols
  static DscMatrix from_dense(int rows, int cols, const std::vector<double>& values);
};

DscMatrix dsc_matrix(const ComponentSet& pred, const ComponentSet& gt);

struct MatchPair {
  int pred = 0;
  int gt = 0;
  double dsc = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchResult {
  double tau = 0.0;
  std::vector<MatchPair> pairs;  // sorted by pred index
  std::vector<int> fp;           // unmatched predictions
  std::vector<int> fn;           // unmatched references

  double total_dsc() const;
};

/// Maximum-total-DSC one-to-one matching over pairs with dsc >= tau and
/// dsc > 0. Among optimal matchings (within 1e-12) the lexicographically
/// smallest pair list is returned.
MatchResult hungarian_match(const DscMatrix& m, double tau);

struct PanopticScores {
  double pq = 0.0;
  double rq = 0.0;
  double sq = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  bool defined = false;  // false when tp = fp = fn = 0
};

PanopticScores panoptic_scores(const MatchResult& match);
PanopticScores panoptic_scores(int tp, int fp, int fn, double dsc_sum);

enum class Stratum { Small = 0, Medium = 1, Large = 2 };
inline constexpr int kNumStrata = 3;
const char* stratum_name(Stratum s);

/// small < small_below <= medium <= large_above < large, in mm^3.
struct SizeStrata {
  double small_below = 500.0;
  double large_above = 5000.0;

  Stratum classify(double mm3) const;
};

/// Scores within each stratum: TP and FN by reference size, FP by predicted size.
std::array<PanopticScores, kNumStrata> stratified_scores(const MatchResult& match,
                                                         const ComponentSet& pred,
                                                         const ComponentSet& gt,
                                                         const SizeStrata& strata);

struct EvalConfig {
  std::vector<RegionSpec> regions = brats_regions();
  std::vector<double> taus = {1e-6, 0.25, 0.5};
  Connectivity connectivity = Connectivity::TwentySix;
  SizeStrata strata;
  double strata_tau = 0.5;

  void validate() const;
};

struct RegionReport {
  std::string region;
  bool absent = false;  // empty in both prediction and reference
  double dsc = 0.0;
  int pred_instances = 0;
  int gt_instances = 0;
  std::vector<PanopticScores> per_tau;               // parallel to EvalConfig::taus
  std::array<PanopticScores, kNumStrata> strata{};  // at strata_tau
};

struct FgMeans {
  std::optional<double> pq, rq, sq;
};

struct CaseReport {
  std::string case_id;
  std::vector<double> taus;
  std::vector<RegionReport> regions;
  /// Means over the regions that are not absent (DSC) or whose scores are
  /// defined (PQ, RQ, SQ).
  std::optional<double> fg_dsc;
  std::vector<FgMeans> fg_per_tau;
  std::array<std::optional<double>, kNumStrata> fg_strata_pq{};
};

CaseReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const EvalConfig& cfg,
                         const std::string& case_id = "");

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  int n = 0;
};

std::optional<MetricSummary> summarize(const std::vector<double>& values);

struct TauRow {
  std::optional<MetricSummary> pq, rq, sq;
  int tp = 0, fp = 0, fn = 0;  // pooled over cases
};

struct StratumRow {
  std::optional<MetricSummary> pq;
  int tp = 0, fp = 0, fn = 0;
};

struct RegionRow {
  std::string region;  // a region name, or "FG" for the foreground mean
  std::optional<MetricSummary> dsc;
  std::vector<TauRow> per_tau;
  std::array<StratumRow, kNumStrata> strata{};
};

struct DatasetReport {
  std::vector<double> taus;
  double strata_tau = 0.5;
  int num_cases = 0;
  std::vector<RegionRow> rows;  // configured regions in order, then FG
};

/// Reports must be given in case-ID order for reproducible output.
DatasetReport aggregate_dataset(const std::vector<CaseReport>& cases, double strata_tau = 0.5);

/// "0.751, 0.28" -> ".751 ± .28".
std::string format_mean_std(double mean, double std);

/// Shortest round-trip spelling of a threshold, used in file names.
std::string format_tau(double tau);

std::string case_report_to_json(const CaseReport& r);
std::string dataset_report_to_json(const DatasetReport& r);
/// One table per threshold: region rows x (DSC, PQ, RQ, SQ, counts).
std::string dataset_tau_csv(const DatasetReport& r, std::size_t tau_index);
/// Typeset cells (".751 ± .28") for one threshold.
std::string dataset_tau_table(const DatasetReport& r, std::size_t tau_index);
std::string dataset_strata_csv(const DatasetReport& r);

}  // namespace instseg
