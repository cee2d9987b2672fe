#include "instseg/panoptic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "instseg/error.hpp"
#include "json.hpp"

namespace instseg {

double mask_dsc(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a.shape(), b.shape(), "dsc masks");
  std::int64_t na = 0, nb = 0, both = 0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    na += da[i];
    nb += db[i];
    both += da[i] & db[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double DscMatrix::at(int pred, int gt) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), std::pair{pred, gt},
                             [](const DscEntry& e, const std::pair<int, int>& key) {
                               return std::pair{e.pred, e.gt} < key;
                             });
  return it != entries.end() && it->pred == pred && it->gt == gt ? it->dsc : 0.0;
}

std::vector<double> DscMatrix::dense() const {
  std::vector<double> out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  for (const auto& e : entries) out[static_cast<std::size_t>(e.pred * cols + e.gt)] = e.dsc;
  return out;
}

DscMatrix DscMatrix::from_dense(int rows, int cols, const std::vector<double>& values) {
  if (rows < 0 || cols < 0 || values.size() != static_cast<std::size_t>(rows * cols)) {
    throw InputError("dense matrix size does not match its dimensions");
  }
  DscMatrix m;
  m.rows = rows;
  m.cols = cols;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = values[static_cast<std::size_t>(i * cols + j)];
      if (!(v >= 0.0 && v <= 1.0)) throw InputError("DSC entries must lie in [0, 1]");
      if (v > 0.0) m.entries.push_back({i, j, v});
    }
  }
  return m;
}

DscMatrix dsc_matrix(const ComponentSet& pred, const ComponentSet& gt) {
  require_same_grid(pred.shape, gt.shape, "dsc matrix");
  std::map<std::pair<int, int>, std::int64_t> overlap;
  for (std::size_t i = 0; i < pred.component_map.size(); ++i) {
    const int p = pred.component_map[i];
    const int g = gt.component_map[i];
    if (p > 0 && g > 0) ++overlap[{p - 1, g - 1}];
  }
  DscMatrix m;
  m.rows = pred.num_components;
  m.cols = gt.num_components;
  for (const auto& [key, n] : overlap) {
    const auto denom = pred.sizes_voxels[static_cast<std::size_t>(key.first)] +
                       gt.sizes_voxels[static_cast<std::size_t>(key.second)];
    m.entries.push_back({key.first, key.second,
                         2.0 * static_cast<double>(n) / static_cast<double>(denom)});
  }
  return m;
}

double MatchResult::total_dsc() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.dsc;
  return s;
}

namespace {

constexpr double kTieTolerance = 1e-12;

// Minimum-cost perfect assignment on an n x n matrix (potentials method).
// Returns row_of_col[j] for j in [0, n).
std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  auto a = [&](int i, int j) { return cost[static_cast<std::size_t>((i - 1) * n + (j - 1))]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_of_col(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
  return row_of_col;
}

// Feasible weights of one connected block of the overlap graph.
class Block {
 public:
  Block(std::vector<int> rows, std::vector<int> cols, const std::map<std::pair<int, int>, double>& w)
      : rows_(std::move(rows)), cols_(std::move(cols)), w_(w) {}

  double weight(int r, int c) const {
    auto it = w_.find({r, c});
    return it == w_.end() ? 0.0 : it->second;
  }

  // Best total over the given subsets.
  double best_total(const std::vector<int>& rows, const std::vector<int>& cols) const {
    const int n = static_cast<int>(std::max(rows.size(), cols.size()));
    if (rows.empty() || cols.empty()) return 0.0;
    std::vector<double> cost(static_cast<std::size_t>(n * n), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) {
        cost[i * static_cast<std::size_t>(n) + j] = -weight(rows[i], cols[j]);
      }
    }
    const auto row_of_col = solve_assignment(cost, n);
    double total = 0.0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto i = static_cast<std::size_t>(row_of_col[j]);
      if (i < rows.size()) total += weight(rows[i], cols[j]);
    }
    return total;
  }

  // Lexicographically smallest optimal pair list: fix predictions in order,
  // trying references in order before leaving the prediction unmatched.
  std::vector<MatchPair> match() const {
    const double optimum = best_total(rows_, cols_);
    std::vector<MatchPair> out;
    std::vector<int> rows(rows_.begin(), rows_.end());
    std::vector<int> cols(cols_.begin(), cols_.end());
    double fixed = 0.0;
    while (!rows.empty()) {
      const int r = rows.front();
      rows.erase(rows.begin());
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const double w = weight(r, cols[j]);
        if (w <= 0.0) continue;
        std::vector<int> rest = cols;
        rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(j));
        if (fixed + w + best_total(rows, rest) >= optimum - kTieTolerance) {
          out.push_back({r, cols[j], w});
          fixed += w;
          cols = std::move(rest);
          break;
        }
      }
    }
    return out;
  }

 private:
  std::vector<int> rows_, cols_;
  const std::map<std::pair<int, int>, double>& w_;
};

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

MatchResult hungarian_match(const DscMatrix& m, double tau) {
  MatchResult out;
  out.tau = tau;
  std::map<std::pair<int, int>, double> feasible;
  std::vector<int> parent(static_cast<std::size_t>(m.rows + m.cols));
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& e : m.entries) {
    if (!(e.dsc > 0.0 && e.dsc >= tau)) continue;
    feasible[{e.pred, e.gt}] = e.dsc;
    const int a = find_root(parent, e.pred);
    const int b = find_root(parent, m.rows + e.gt);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<int, std::pair<std::vector<int>, std::vector<int>>> blocks;
  for (const auto& [key, w] : feasible) {
    (void)w;
    auto& blk = blocks[find_root(parent, key.first)];
    blk.first.push_back(key.first);
    blk.second.push_back(key.second);
  }
  std::vector<char> pred_used(static_cast<std::size_t>(m.rows), 0);
  std::vector<char> gt_used(static_cast<std::size_t>(m.cols), 0);
  for (auto& [root, blk] : blocks) {
    (void)root;
    for (auto* v : {&blk.first, &blk.second}) {
      std::sort(v->begin(), v->end());
      v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    const Block block(blk.first, blk.second, feasible);
    for (const auto& pr : block.match()) {
      out.pairs.push_back(pr);
      pred_used[static_cast<std::size_t>(pr.pred)] = 1;
      gt_used[static_cast<std::size_t>(pr.gt)] = 1;
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const MatchPair& a, const MatchPair& b) { return a.pred < b.pred; });
  for (int i = 0; i < m.rows; ++i) {
    if (!pred_used[static_cast<std::size_t>(i)]) out.fp.push_back(i);
  }
  for (int j = 0; j < m.cols; ++j) {
    if (!gt_used[static_cast<std::size_t>(j)]) out.fn.push_back(j);
  }
  return out;
}

PanopticScores panoptic_scores(int tp, int fp, int fn, double dsc_sum) {
  PanopticScores s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.defined = tp + fp + fn > 0;
  if (!s.defined) return s;
  s.rq = static_cast<double>(tp) / (static_cast<double>(tp) + 0.5 * fp + 0.5 * fn);
  s.sq = tp > 0 ? dsc_sum / static_cast<double>(tp) : 0.0;
  s.pq = s.rq * s.sq;
  return s;
}

PanopticScores panoptic_scores(const MatchResult& match) {
  return panoptic_scores(static_cast<int>(match.pairs.size()), static_cast<int>(match.fp.size()),
                         static_cast<int>(match.fn.size()), match.total_dsc());
}

const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::Small: return "small";
    case Stratum::Medium: return "medium";
    case Stratum::Large: return "large";
  }
  return "?";
}

Stratum SizeStrata::classify(double mm3) const {
  if (mm3 < small_below) return Stratum::Small;
  if (mm3 > large_above) return Stratum::Large;
  return Stratum::Medium;
}

std::array<PanopticScores, kNumStrata> stratified_scores(const MatchResult& match,
                                                         const ComponentSet& pred,
                                                         const ComponentSet& gt,
                                                         const SizeStrata& strata) {
  std::array<int, kNumStrata> tp{}, fp{}, fn{};
  std::array<double, kNumStrata> sum{};
  auto gt_stratum = [&](int j) {
    return static_cast<int>(strata.classify(gt.sizes_mm3[static_cast<std::size_t>(j)]));
  };
  for (const auto& p : match.pairs) {
    const int s = gt_stratum(p.gt);
    ++tp[s];
    sum[s] += p.dsc;
  }
  for (int j : match.fn) ++fn[gt_stratum(j)];
  for (int i : match.fp) {
    ++fp[static_cast<int>(strata.classify(pred.sizes_mm3[static_cast<std::size_t>(i)]))];
  }
  std::array<PanopticScores, kNumStrata> out;
  for (int s = 0; s < kNumStrata; ++s) out[s] = panoptic_scores(tp[s], fp[s], fn[s], sum[s]);
  return out;
}

void EvalConfig::validate() const {
  if (regions.empty()) throw InputError("at least one region is required");
  if (taus.empty()) throw InputError("at least one threshold is required");
  for (double t : taus) {
    if (!(t > 0.0 && t <= 1.0)) throw InputError("thresholds must lie in (0, 1]");
  }
  if (!(strata_tau > 0.0 && strata_tau <= 1.0)) throw InputError("strata threshold must lie in (0, 1]");
  if (!(strata.small_below > 0.0 && strata.small_below <= strata.large_above)) {
    throw InputError("size strata bounds must satisfy 0 < small <= large");
  }
}

namespace {

template <class Get>
std::optional<double> mean_of(const std::vector<RegionReport>& regions, Get get) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : regions) {
    if (auto v = get(r)) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

}  // namespace

CaseReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const EvalConfig& cfg,
                         const std::string& case_id) {
  cfg.validate();
  require_same_grid(pred.shape(), gt.shape(), "prediction vs reference");
  if (pred.num_classes() != gt.num_classes()) {
    throw InputError("prediction and reference disagree on num_classes");
  }
  CaseReport rep;
  rep.case_id = case_id;
  rep.taus = cfg.taus;
  for (const auto& spec : cfg.regions) {
    spec.validate(gt.num_classes());
    const BinaryMask pm = derive_region(pred, spec);
    const BinaryMask gm = derive_region(gt, spec);
    RegionReport rr;
    rr.region = spec.name;
    rr.absent = pm.empty() && gm.empty();
    rr.dsc = mask_dsc(pm, gm);
    const ComponentSet pc = connected_components(pm, cfg.connectivity);
    const ComponentSet gc = connected_components(gm, cfg.connectivity);
    rr.pred_instances = pc.num_components;
    rr.gt_instances = gc.num_components;
    const DscMatrix dm = dsc_matrix(pc, gc);
    for (double tau : cfg.taus) rr.per_tau.push_back(panoptic_scores(hungarian_match(dm, tau)));
    rr.strata = stratified_scores(hungarian_match(dm, cfg.strata_tau), pc, gc, cfg.strata);
    rep.regions.push_back(std::move(rr));
  }
  rep.fg_dsc = mean_of(rep.regions, [](const RegionReport& r) -> std::optional<double> {
    if (r.absent) return std::nullopt;
    return r.dsc;
  });
  for (std::size_t t = 0; t < cfg.taus.size(); ++t) {
    auto pick = [t](double PanopticScores::*field) {
      return [t, field](const RegionReport& r) -> std::optional<double> {
        if (!r.per_tau[t].defined) return std::nullopt;
        return r.per_tau[t].*field;
      };
    };
    rep.fg_per_tau.push_back({mean_of(rep.regions, pick(&PanopticScores::pq)),
                              mean_of(rep.regions, pick(&PanopticScores::rq)),
                              mean_of(rep.regions, pick(&PanopticScores::sq))});
  }
  for (int s = 0; s < kNumStrata; ++s) {
    rep.fg_strata_pq[s] = mean_of(rep.regions, [s](const RegionReport& r) -> std::optional<double> {
      if (!r.strata[s].defined) return std::nullopt;
      return r.strata[s].pq;
    });
  }
  return rep;
}

std::optional<MetricSummary> summarize(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  MetricSummary m;
  m.n = static_cast<int>(values.size());
  double s = 0.0;
  for (double v : values) s += v;
  m.mean = s / m.n;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / m.n);
  return m;
}

DatasetReport aggregate_dataset(const std::vector<CaseReport>& cases, double strata_tau) {
  if (cases.empty()) throw InputError("no case reports to aggregate");
  DatasetReport out;
  out.taus = cases.front().taus;
  out.strata_tau = strata_tau;
  out.num_cases = static_cast<int>(cases.size());
  const std::size_t nreg = cases.front().regions.size();
  const std::size_t ntau = out.taus.size();
  for (const auto& c : cases) {
    if (c.regions.size() != nreg || c.taus != out.taus) {
      throw InputError("case reports were produced with different settings");
    }
  }

  for (std::size_t r = 0; r < nreg; ++r) {
    RegionRow row;
    row.region = cases.front().regions[r].region;
    std::vector<double> dsc;
    for (const auto& c : cases) {
      if (!c.regions[r].absent) dsc.push_back(c.regions[r].dsc);
    }
    row.dsc = summarize(dsc);
    for (std::size_t t = 0; t < ntau; ++t) {
      TauRow tr;
      std::vector<double> pq, rq, sq;
      for (const auto& c : cases) {
        const auto& s = c.regions[r].per_tau[t];
        tr.tp += s.tp;
        tr.fp += s.fp;
        tr.fn += s.fn;
        if (!s.defined) continue;
        pq.push_back(s.pq);
        rq.push_back(s.rq);
        sq.push_back(s.sq);
      }
      tr.pq = summarize(pq);
      tr.rq = summarize(rq);
      tr.sq = summarize(sq);
      row.per_tau.push_back(tr);
    }
    for (int s = 0; s < kNumStrata; ++s) {
      std::vector<double> pq;
      auto& sr = row.strata[s];
      for (const auto& c : cases) {
        const auto& sc = c.regions[r].strata[s];
        sr.tp += sc.tp;
        sr.fp += sc.fp;
        sr.fn += sc.fn;
        if (sc.defined) pq.push_back(sc.pq);
      }
      sr.pq = summarize(pq);
    }
    out.rows.push_back(std::move(row));
  }

  RegionRow fg;
  fg.region = "FG";
  {
    std::vector<double> dsc;
    for (const auto& c : cases) {
      if (c.fg_dsc) dsc.push_back(*c.fg_dsc);
    }
    fg.dsc = summarize(dsc);
  }
  for (std::size_t t = 0; t < ntau; ++t) {
    TauRow tr;
    std::vector<double> pq, rq, sq;
    for (const auto& c : cases) {
      const auto& m = c.fg_per_tau[t];
      if (m.pq) pq.push_back(*m.pq);
      if (m.rq) rq.push_back(*m.rq);
      if (m.sq) sq.push_back(*m.sq);
    }
    for (std::size_t r = 0; r < nreg; ++r) {
      tr.tp += out.rows[r].per_tau[t].tp;
      tr.fp += out.rows[r].per_tau[t].fp;
      tr.fn += out.rows[r].per_tau[t].fn;
    }
    tr.pq = summarize(pq);
    tr.rq = summarize(rq);
    tr.sq = summarize(sq);
    fg.per_tau.push_back(tr);
  }
  for (int s = 0; s < kNumStrata; ++s) {
    std::vector<double> pq;
    for (const auto& c : cases) {
      if (c.fg_strata_pq[s]) pq.push_back(*c.fg_strata_pq[s]);
    }
    for (std::size_t r = 0; r < nreg; ++r) {
      fg.strata[s].tp += out.rows[r].strata[s].tp;
      fg.strata[s].fp += out.rows[r].strata[s].fp;
      fg.strata[s].fn += out.rows[r].strata[s].fn;
    }
    fg.strata[s].pq = summarize(pq);
  }
  out.rows.push_back(std::move(fg));
  return out;
}

namespace {

std::string strip_leading_zero(std::string s) {
  if (s.rfind("0.", 0) == 0) return s.substr(1);
  if (s.rfind("-0.", 0) == 0) return "-" + s.substr(2);
  return s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string num(double v) { return nlohmann::json(v).dump(); }

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json scores_json(const PanopticScores& s) {
  nlohmann::json j;
  j["defined"] = s.defined;
  j["pq"] = s.defined ? nlohmann::json(s.pq) : nlohmann::json(nullptr);
  j["rq"] = s.defined ? nlohmann::json(s.rq) : nlohmann::json(nullptr);
  j["sq"] = s.defined ? nlohmann::json(s.sq) : nlohmann::json(nullptr);
  j["tp"] = s.tp;
  j["fp"] = s.fp;
  j["fn"] = s.fn;
  return j;
}

nlohmann::json summary_json(const std::optional<MetricSummary>& m) {
  if (!m) return nullptr;
  return {{"mean", m->mean}, {"std", m->std}, {"n", m->n}};
}

std::string summary_csv(const std::optional<MetricSummary>& m) {
  if (!m) return ",,0";
  return num(m->mean) + ',' + num(m->std) + ',' + std::to_string(m->n);
}

std::string summary_cell(const std::optional<MetricSummary>& m) {
  return m ? format_mean_std(m->mean, m->std) : "--";
}

}  // namespace

std::string format_mean_std(double mean, double std) {
  return strip_leading_zero(fixed(mean, 3)) + " ± " + strip_leading_zero(fixed(std, 2));
}

std::string format_tau(double tau) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, tau);
  return std::string(buf, res.ptr);
}

std::string case_report_to_json(const CaseReport& r) {
  nlohmann::json j;
  j["case_id"] = r.case_id;
  j["taus"] = r.taus;
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& rr : r.regions) {
    nlohmann::json e;
    e["region"] = rr.region;
    e["absent"] = rr.absent;
    e["dsc"] = rr.absent ? nlohmann::json(nullptr) : nlohmann::json(rr.dsc);
    e["pred_instances"] = rr.pred_instances;
    e["gt_instances"] = rr.gt_instances;
    nlohmann::json per_tau = nlohmann::json::array();
    for (std::size_t t = 0; t < rr.per_tau.size(); ++t) {
      nlohmann::json s = scores_json(rr.per_tau[t]);
      s["tau"] = r.taus[t];
      per_tau.push_back(std::move(s));
    }
    e["per_tau"] = std::move(per_tau);
    nlohmann::json strata;
    for (int s = 0; s < kNumStrata; ++s) {
      strata[stratum_name(static_cast<Stratum>(s))] = scores_json(rr.strata[s]);
    }
    e["strata"] = std::move(strata);
    regions.push_back(std::move(e));
  }
  j["regions"] = std::move(regions);
  nlohmann::json fg;
  fg["dsc"] = opt_json(r.fg_dsc);
  nlohmann::json per_tau = nlohmann::json::array();
  for (std::size_t t = 0; t < r.fg_per_tau.size(); ++t) {
    const auto& m = r.fg_per_tau[t];
    per_tau.push_back({{"tau", r.taus[t]}, {"pq", opt_json(m.pq)}, {"rq", opt_json(m.rq)},
                       {"sq", opt_json(m.sq)}});
  }
  fg["per_tau"] = std::move(per_tau);
  nlohmann::json fs;
  for (int s = 0; s < kNumStrata; ++s) {
    fs[stratum_name(static_cast<Stratum>(s))] = opt_json(r.fg_strata_pq[s]);
  }
  fg["strata_pq"] = std::move(fs);
  j["fg"] = std::move(fg);
  return j.dump(2) + "\n";
}

std::string dataset_report_to_json(const DatasetReport& r) {
  nlohmann::json j;
  j["num_cases"] = r.num_cases;
  j["taus"] = r.taus;
  j["strata_tau"] = r.strata_tau;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json e;
    e["region"] = row.region;
    e["dsc"] = summary_json(row.dsc);
    nlohmann::json per_tau = nlohmann::json::array();
    for (std::size_t t = 0; t < row.per_tau.size(); ++t) {
      const auto& tr = row.per_tau[t];
      per_tau.push_back({{"tau", r.taus[t]},
                         {"pq", summary_json(tr.pq)},
                         {"rq", summary_json(tr.rq)},
                         {"sq", summary_json(tr.sq)},
                         {"tp", tr.tp},
                         {"fp", tr.fp},
                         {"fn", tr.fn}});
    }
    e["per_tau"] = std::move(per_tau);
    nlohmann::json strata;
    for (int s = 0; s < kNumStrata; ++s) {
      const auto& sr = row.strata[s];
      strata[stratum_name(static_cast<Stratum>(s))] = {
          {"pq", summary_json(sr.pq)}, {"tp", sr.tp}, {"fp", sr.fp}, {"fn", sr.fn}};
    }
    e["strata"] = std::move(strata);
    rows.push_back(std::move(e));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string dataset_tau_csv(const DatasetReport& r, std::size_t t) {
  if (t >= r.taus.size()) throw InputError("threshold index out of range");
  std::string out =
      "region,dsc_mean,dsc_std,dsc_n,pq_mean,pq_std,pq_n,rq_mean,rq_std,rq_n,sq_mean,sq_std,sq_n,"
      "tp,fp,fn\n";
  for (const auto& row : r.rows) {
    const auto& tr = row.per_tau[t];
    out += row.region + ',' + summary_csv(row.dsc) + ',' + summary_csv(tr.pq) + ',' +
           summary_csv(tr.rq) + ',' + summary_csv(tr.sq) + ',' + std::to_string(tr.tp) + ',' +
           std::to_string(tr.fp) + ',' + std::to_string(tr.fn) + '\n';
  }
  return out;
}

std::string dataset_tau_table(const DatasetReport& r, std::size_t t) {
  if (t >= r.taus.size()) throw InputError("threshold index out of range");
  std::string out = "region,DSC,PQ,RQ,SQ\n";
  for (const auto& row : r.rows) {
    const auto& tr = row.per_tau[t];
    out += row.region + ',' + summary_cell(row.dsc) + ',' + summary_cell(tr.pq) + ',' +
           summary_cell(tr.rq) + ',' + summary_cell(tr.sq) + '\n';
  }
  return out;
}

std::string dataset_strata_csv(const DatasetReport& r) {
  std::string out = "region,stratum,pq_mean,pq_std,pq_n,tp,fp,fn\n";
  for (const auto& row : r.rows) {
    for (int s = 0; s < kNumStrata; ++s) {
      const auto& sr = row.strata[s];
      out += row.region + ',' + stratum_name(static_cast<Stratum>(s)) + ',' + summary_csv(sr.pq) +
             ',' + std::to_string(sr.tp) + ',' + std::to_string(sr.fp) + ',' +
             std::to_string(sr.fn) + '\n';
    }
  }
  return out;
}

}  // namespace instseg
