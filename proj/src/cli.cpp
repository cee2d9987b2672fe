#include "instseg/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "instseg/error.hpp"
#include "instseg/gradshare.hpp"
#include "instseg/instances.hpp"
#include "instseg/losses.hpp"
#include "instseg/panoptic.hpp"
#include "instseg/parallel.hpp"
#include "instseg/synth.hpp"
#include "instseg/volume_io.hpp"
#include "json.hpp"

namespace instseg {

namespace fs = std::filesystem;

namespace {

// JSON config: top-level keys are global flags, objects named after a
// subcommand hold that subcommand's flags. Keys are flag names without dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [sub_key, sub_value] : value.items()) {
          items.push_back(item({key}, sub_key, sub_value));
        }
      } else {
        items.push_back(item({}, key, value));
      }
    }
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw CLI::ConversionError("config values must be scalars or arrays of scalars");
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name,
                              const nlohmann::json& value) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = name;
    if (value.is_array()) {
      for (const auto& v : value) it.inputs.push_back(scalar(v));
    } else {
      it.inputs.push_back(scalar(value));
    }
    return it;
  }
};

struct GlobalOpts {
  int threads = 1;
  std::uint64_t seed = 0;
  std::string format = "json";
  int connectivity = 26;
  std::string units = "mm";
};

struct LossOpts {
  std::string variant = "baseline";
  double alpha = 1.0;
  double beta = 1.0;
  double dice_smooth = 1e-5;
  double ce_clip = 1e-7;
  double weight_lo = 1.0;
  double weight_hi = 2e5;
  std::string iwl_scope = "component";

  LossConfig config(const GlobalOpts& g) const {
    LossConfig c;
    c.variant = parse_variant(variant);
    c.alpha = alpha;
    c.beta = beta;
    c.dice_smooth = dice_smooth;
    c.ce_clip = ce_clip;
    c.weight_lo = weight_lo;
    c.weight_hi = weight_hi;
    c.iwl_scope = parse_iwl_scope(iwl_scope);
    c.connectivity = connectivity_from_int(g.connectivity);
    c.units = g.units == "voxel" ? DistanceUnits::Voxel : DistanceUnits::Millimetre;
    c.validate();
    return c;
  }
};

void add_loss_params(CLI::App* sub, LossOpts& o, bool with_variant) {
  if (with_variant) {
    sub->add_option("--variant", o.variant,
                    "baseline, blob, cc, iwl_blob, iwl_cc, invweight_global or invweight_local")
        ->capture_default_str();
  }
  sub->add_option("--alpha", o.alpha, "Weight of the global loss")->capture_default_str();
  sub->add_option("--beta", o.beta, "Weight of the instance loss")->capture_default_str();
  sub->add_option("--dice-smooth", o.dice_smooth, "Dice smoothing")->capture_default_str();
  sub->add_option("--ce-clip", o.ce_clip, "Cross-entropy probability clamp")->capture_default_str();
  sub->add_option("--weight-lo", o.weight_lo, "Lower clamp of inverse-size weights")
      ->capture_default_str();
  sub->add_option("--weight-hi", o.weight_hi, "Upper clamp of inverse-size weights")
      ->capture_default_str();
  sub->add_option("--iwl-scope", o.iwl_scope,
                  "Inverse-size weight scope: component or domain")
      ->check(CLI::IsMember({"component", "domain"}))
      ->capture_default_str();
}

struct StrataOpts {
  double small = 500.0;
  double large = 5000.0;

  SizeStrata strata() const { return SizeStrata{small, large}; }
};

void add_strata_params(CLI::App* sub, StrataOpts& o) {
  sub->add_option("--strata-small", o.small, "Upper bound of the small stratum, mm^3")
      ->capture_default_str();
  sub->add_option("--strata-large", o.large, "Lower bound of the large stratum, mm^3")
      ->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw ComputeError("cannot create " + path.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!(f << text)) throw ComputeError("cannot write " + path.string());
}

void emit(const std::string& out_path, const std::string& text, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
  }
}

std::vector<fs::path> as_paths(const std::vector<std::string>& v) {
  return std::vector<fs::path>(v.begin(), v.end());
}

ProbVolume load_prediction(const std::vector<std::string>& files, bool logits) {
  const auto paths = as_paths(files);
  return logits ? load_logits(paths) : load_probs(paths, true);
}

std::vector<fs::path> list_volumes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_volume_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return files;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void warn(std::ostream& err, const std::string& message) {
  err << nlohmann::json{{"warning", message}}.dump() << '\n';
}

struct CasePair {
  std::string id;
  fs::path pred;
  fs::path gt;
};

std::vector<CasePair> pair_from_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw InputError("cannot open " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("unreadable manifest " + manifest.string() + ": " + e.what());
  }
  const nlohmann::json& list = j.is_object() && j.contains("cases") ? j["cases"] : j;
  if (!list.is_array()) throw InputError("manifest must list cases as [{id, pred, gt}]");
  const fs::path base = manifest.parent_path();
  std::vector<CasePair> out;
  for (const auto& e : list) {
    if (!e.is_object() || !e.contains("id") || !e.contains("pred") || !e.contains("gt")) {
      throw InputError("manifest entries need id, pred and gt");
    }
    auto resolve = [&](const std::string& p) {
      const fs::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    out.push_back({e["id"].get<std::string>(), resolve(e["pred"].get<std::string>()),
                   resolve(e["gt"].get<std::string>())});
  }
  std::sort(out.begin(), out.end(), [](const CasePair& a, const CasePair& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].id == out[i - 1].id) throw InputError("duplicate case id in manifest: " + out[i].id);
  }
  return out;
}

std::vector<CasePair> pair_by_stem(const fs::path& dir, std::ostream& err) {
  std::map<std::string, fs::path> preds, gts;
  for (const auto& f : list_volumes(dir)) {
    const std::string stem = volume_stem(f);
    if (ends_with(stem, "_pred")) {
      preds[stem.substr(0, stem.size() - 5)] = f;
    } else if (ends_with(stem, "_gt")) {
      gts[stem.substr(0, stem.size() - 3)] = f;
    }
  }
  std::vector<CasePair> out;
  for (const auto& [id, p] : preds) {
    auto it = gts.find(id);
    if (it == gts.end()) {
      warn(err, "skipping " + p.filename().string() + ": no matching _gt volume");
      continue;
    }
    out.push_back({id, p, it->second});
  }
  for (const auto& [id, g] : gts) {
    if (!preds.count(id)) warn(err, "skipping " + g.filename().string() + ": no matching _pred volume");
  }
  return out;
}

// ---------------------------------------------------------------------------

struct LossCmd {
  LossOpts loss;
  std::vector<std::string> pred;
  bool logits = false;
  std::string labels;
  std::optional<int> num_classes;
  std::string out;
  std::string grad_dir;
  std::string grad_wrt = "probs";
};

void run_loss(const LossCmd& c, const GlobalOpts& g, std::ostream& out) {
  const LossConfig cfg = c.loss.config(g);
  const LabelVolume labels = load_labels(c.labels, c.num_classes);
  const ProbVolume prob = load_prediction(c.pred, c.logits);
  const LossBreakdown b = combined_loss(prob, labels, cfg);
  emit(c.out, g.format == "csv" ? breakdown_to_csv(b) : breakdown_to_json(b), out);
  if (!c.grad_dir.empty()) {
    std::error_code ec;
    fs::create_directories(c.grad_dir, ec);
    if (ec) throw ComputeError("cannot create " + c.grad_dir);
    const ChannelField grad = c.grad_wrt == "logits" ? backprop_logits(b.grad, prob) : b.grad;
    for (int k = 0; k < grad.channels(); ++k) {
      save_scalar(grad.shape(), grad.channel(k),
                  fs::path(c.grad_dir) / ("grad_" + std::to_string(k) + ".raw"),
                  FileFormat::RawSidecar, grad.channels());
    }
  }
}

struct EvalCmd {
  std::string dir;
  std::string manifest;
  std::string out;
  std::string regions;
  std::vector<double> taus{1e-6, 0.25, 0.5};
  StrataOpts strata;
  double strata_tau = 0.5;
  std::optional<int> num_classes;
};

void run_eval(const EvalCmd& c, const GlobalOpts& g, std::ostream& err) {
  EvalConfig cfg;
  if (!c.regions.empty()) cfg.regions = parse_regions(c.regions);
  cfg.taus = c.taus;
  cfg.connectivity = connectivity_from_int(g.connectivity);
  cfg.strata = c.strata.strata();
  cfg.strata_tau = c.strata_tau;
  cfg.validate();
  if (c.dir.empty() && c.manifest.empty()) throw InputError("eval needs --dir or --manifest");
  const std::vector<CasePair> pairs =
      c.manifest.empty() ? pair_by_stem(c.dir, err) : pair_from_manifest(c.manifest);
  if (pairs.empty()) throw InputError("no (pred, gt) case pairs found");

  std::vector<CaseReport> reports(pairs.size());
  parallel_for(pairs.size(), g.threads, [&](std::size_t i) {
    const LabelVolume pred = load_labels(pairs[i].pred, c.num_classes);
    const LabelVolume gt = load_labels(pairs[i].gt, c.num_classes);
    reports[i] = evaluate_case(pred, gt, cfg, pairs[i].id);
  });

  const fs::path out_dir(c.out);
  for (const auto& r : reports) write_text(out_dir / "cases" / (r.case_id + ".json"), case_report_to_json(r));
  const DatasetReport ds = aggregate_dataset(reports, cfg.strata_tau);
  write_text(out_dir / "report.json", dataset_report_to_json(ds));
  for (std::size_t t = 0; t < ds.taus.size(); ++t) {
    const std::string tag = format_tau(ds.taus[t]);
    write_text(out_dir / ("tau_" + tag + ".csv"), dataset_tau_csv(ds, t));
    write_text(out_dir / ("table_tau_" + tag + ".csv"), dataset_tau_table(ds, t));
  }
  write_text(out_dir / "strata.csv", dataset_strata_csv(ds));
}

struct StatsCmd {
  std::string dir;
  std::string suffix = "_gt";
  std::string regions;
  std::string out;
  std::optional<int> num_classes;
  bool table = false;
};

void run_stats(const StatsCmd& c, const GlobalOpts& g, std::ostream& out) {
  const std::vector<RegionSpec> regions =
      c.regions.empty() ? brats_regions() : parse_regions(c.regions);
  const Connectivity conn = connectivity_from_int(g.connectivity);
  std::vector<fs::path> files;
  for (const auto& f : list_volumes(c.dir)) {
    if (c.suffix.empty() || ends_with(volume_stem(f), c.suffix)) files.push_back(f);
  }
  if (files.empty()) throw InputError("no label volumes found in " + c.dir);
  std::vector<std::vector<CaseRegionStats>> partial(files.size());
  std::vector<int> classes(files.size());
  parallel_for(files.size(), g.threads, [&](std::size_t i) {
    const LabelVolume v = load_labels(files[i], c.num_classes);
    for (const auto& r : regions) r.validate(v.num_classes());
    classes[i] = v.num_classes();
    partial[i] = case_region_stats(v, regions, conn);
  });
  if (std::adjacent_find(classes.begin(), classes.end(), std::not_equal_to<>()) != classes.end()) {
    throw InputError("label volumes disagree on num_classes");
  }
  const DatasetStats stats = reduce_dataset_stats(partial, regions);
  std::string text;
  if (c.table) {
    for (const auto& row : stats.regions) text += stats_table_row(row) + "\n";
  } else {
    text = g.format == "csv" ? stats_to_csv(stats) : stats_to_json(stats);
  }
  emit(c.out, text, out);
}

struct SynthCmd {
  std::string out;
  int cases = 10;
  std::vector<std::int64_t> shape{32, 32, 32};
  std::vector<double> spacing{1.0, 1.0, 1.0};
  int num_classes = 3;
  std::vector<std::string> classes;
  bool predictions = false;
  double drop = 0.0;
  double erode = 0.0;
  bool probs = false;
  double sharpness = 4.0;
  double noise = 0.5;
  std::string ext = ".raw";
  int attempts = 1000;
};

void run_synth(const SynthCmd& c, const GlobalOpts& g) {
  if (c.shape.size() != 3 || c.spacing.size() != 3) {
    throw InputError("--shape and --spacing take three values (z y x)");
  }
  SynthSpec s;
  s.shape = GridShape(c.shape[0], c.shape[1], c.shape[2], {c.spacing[0], c.spacing[1], c.spacing[2]});
  s.num_classes = c.num_classes;
  if (c.classes.empty()) {
    s.classes = {SynthClassSpec::parse("1:1:2:4:3:6"), SynthClassSpec::parse("2:0.1:1:1:1.5:3")};
  } else {
    for (const auto& t : c.classes) s.classes.push_back(SynthClassSpec::parse(t));
  }
  s.num_cases = c.cases;
  s.seed = g.seed;
  s.max_attempts = c.attempts;
  s.predictions = c.predictions || c.drop > 0.0 || c.erode > 0.0;
  s.drop_prob = c.drop;
  s.erode_voxels = c.erode;
  s.probabilities = c.probs;
  s.sharpness = c.sharpness;
  s.noise = c.noise;
  if (c.out.empty()) throw InputError("synth needs --out");
  synth_generate(s, c.out, c.ext, g.threads);
}

struct GradShareCmd {
  LossOpts loss;
  std::vector<std::string> variants{"baseline", "blob", "cc"};
  std::vector<std::string> pred;
  bool logits = false;
  std::string labels;
  std::string dir;
  std::optional<int> num_classes;
  std::string norm = "l1";
  StrataOpts strata;
  std::string out;
};

void run_gradshare(const GradShareCmd& c, const GlobalOpts& g, std::ostream& out) {
  std::vector<LossConfig> cfgs;
  for (const auto& v : c.variants) {
    LossOpts o = c.loss;
    o.variant = v;
    cfgs.push_back(o.config(g));
  }
  if (cfgs.empty()) throw InputError("gradshare needs at least one variant");
  const GradNorm norm = parse_grad_norm(c.norm);
  const SizeStrata strata = c.strata.strata();

  struct Job {
    std::string id;
    fs::path labels;
    std::vector<fs::path> channels;
  };
  std::vector<Job> jobs;
  if (!c.dir.empty()) {
    for (const auto& f : list_volumes(c.dir)) {
      const std::string stem = volume_stem(f);
      if (!ends_with(stem, "_gt")) continue;
      const std::string id = stem.substr(0, stem.size() - 3);
      const LabelVolume probe = load_labels(f, c.num_classes);
      std::string ext = f.filename().string().substr(stem.size());
      Job job{id, f, {}};
      for (int k = 0; k < probe.num_classes(); ++k) {
        job.channels.push_back(f.parent_path() / (id + "_prob_" + std::to_string(k) + ext));
      }
      jobs.push_back(std::move(job));
    }
    if (jobs.empty()) throw InputError("no _gt volumes found in " + c.dir);
  } else {
    if (c.labels.empty() || c.pred.empty()) {
      throw InputError("gradshare needs --labels with --pred, or --dir");
    }
    jobs.push_back({volume_stem(c.labels), c.labels, as_paths(c.pred)});
  }

  std::vector<std::vector<GradShareReport>> results(jobs.size());
  parallel_for(jobs.size(), g.threads, [&](std::size_t i) {
    const LabelVolume labels = load_labels(jobs[i].labels, c.num_classes);
    const ProbVolume prob = c.logits ? load_logits(jobs[i].channels) : load_probs(jobs[i].channels, true);
    for (const auto& cfg : cfgs) results[i].push_back(gradient_share(prob, labels, cfg, strata, norm));
  });
  std::vector<std::pair<std::string, GradShareReport>> flat;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (auto& r : results[i]) flat.emplace_back(jobs[i].id, std::move(r));
  }
  emit(c.out, g.format == "csv" ? gradshare_to_csv(flat) : gradshare_to_json(flat), out);
}

int report_error(std::ostream& err, int code, const char* kind, const std::string& message) {
  err << nlohmann::json{{"error", {{"exit_code", code}, {"type", kind}, {"message", message}}}}.dump()
      << '\n';
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instance-sensitive segmentation losses and instance-level evaluation", "instseg"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with flag values; command-line flags take precedence");

  GlobalOpts g;
  app.add_option("--threads", g.threads, "Worker threads for per-case work")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--format", g.format, "Output format for loss, stats and gradshare")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  app.add_option("--connectivity", g.connectivity, "Component connectivity")
      ->check(CLI::IsMember({6, 18, 26}))
      ->capture_default_str();
  app.add_option("--units", g.units, "Distance units for Voronoi cells")
      ->check(CLI::IsMember({"mm", "voxel"}))
      ->capture_default_str();

  LossCmd loss;
  auto* loss_cmd = app.add_subcommand("loss", "Loss value, per-component breakdown and gradient");
  add_loss_params(loss_cmd, loss.loss, true);
  loss_cmd->add_option("--pred", loss.pred, "One probability (or logit) volume per class, in class order")
      ->required();
  loss_cmd->add_flag("--logits", loss.logits, "Prediction files hold logits; softmax is applied");
  loss_cmd->add_option("--labels", loss.labels, "Label volume")->required();
  loss_cmd->add_option("--num-classes", loss.num_classes, "Override num_classes of the label file");
  loss_cmd->add_option("--out", loss.out, "Output file (default: stdout)");
  loss_cmd->add_option("--grad-dir", loss.grad_dir, "Directory for per-class gradient volumes");
  loss_cmd->add_option("--grad-wrt", loss.grad_wrt, "Dump gradients with respect to probs or logits")
      ->check(CLI::IsMember({"probs", "logits"}))
      ->capture_default_str();

  EvalCmd ev;
  auto* eval_cmd = app.add_subcommand("eval", "Region DSC and matched PQ/RQ/SQ over a dataset");
  eval_cmd->add_option("--dir", ev.dir, "Directory of <id>_pred / <id>_gt volumes");
  eval_cmd->add_option("--manifest", ev.manifest, "JSON pairing file [{id, pred, gt}]");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--regions", ev.regions, "Regions, e.g. \"WT=1,2,3;TC=1,3;ET=3;RC=4\"");
  eval_cmd->add_option("--taus", ev.taus, "Matching thresholds")->capture_default_str();
  add_strata_params(eval_cmd, ev.strata);
  eval_cmd->add_option("--strata-tau", ev.strata_tau, "Threshold for size-stratified scores")
      ->capture_default_str();
  eval_cmd->add_option("--num-classes", ev.num_classes, "Override num_classes of the label files");

  StatsCmd st;
  auto* stats_cmd = app.add_subcommand("stats", "Per-region dataset statistics");
  stats_cmd->add_option("--dir", st.dir, "Directory of label volumes")->required();
  stats_cmd->add_option("--suffix", st.suffix, "Only use files whose stem ends with this")
      ->capture_default_str();
  stats_cmd->add_option("--regions", st.regions, "Regions, e.g. \"WT=1,2,3;TC=1,3;ET=3;RC=4\"");
  stats_cmd->add_option("--out", st.out, "Output file (default: stdout)");
  stats_cmd->add_option("--num-classes", st.num_classes, "Override num_classes of the label files");
  stats_cmd->add_flag("--table", st.table, "Emit typeset table rows instead of JSON/CSV");

  SynthCmd sy;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic ball phantoms");
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--cases", sy.cases, "Number of cases")->capture_default_str();
  synth_cmd->add_option("--shape", sy.shape, "Grid size z y x")->expected(3)->capture_default_str();
  synth_cmd->add_option("--spacing", sy.spacing, "Voxel spacing z y x in mm")
      ->expected(3)
      ->capture_default_str();
  synth_cmd->add_option("--num-classes", sy.num_classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--class", sy.classes,
                        "label:presence:count_min:count_max:radius_min:radius_max (repeatable)");
  synth_cmd->add_flag("--predictions", sy.predictions, "Also write corrupted predictions");
  synth_cmd->add_option("--drop", sy.drop, "Probability of dropping an instance from the prediction")
      ->capture_default_str();
  synth_cmd->add_option("--erode", sy.erode, "Radius reduction of predicted instances, voxels")
      ->capture_default_str();
  synth_cmd->add_flag("--probs", sy.probs, "Also write per-class probability volumes");
  synth_cmd->add_option("--sharpness", sy.sharpness, "Logit gap of the predicted class")
      ->capture_default_str();
  synth_cmd->add_option("--noise", sy.noise, "Uniform logit noise amplitude")->capture_default_str();
  synth_cmd->add_option("--ext", sy.ext, "Volume extension")
      ->check(CLI::IsMember({".raw", ".nii", ".nii.gz"}))
      ->capture_default_str();
  synth_cmd->add_option("--attempts", sy.attempts, "Placement attempts per instance")
      ->capture_default_str();

  GradShareCmd gs;
  auto* gs_cmd = app.add_subcommand("gradshare", "Gradient mass by class and instance size");
  add_loss_params(gs_cmd, gs.loss, false);
  gs_cmd->add_option("--variants", gs.variants, "Loss variants to compare")->capture_default_str();
  gs_cmd->add_option("--pred", gs.pred, "One probability (or logit) volume per class");
  gs_cmd->add_flag("--logits", gs.logits, "Prediction files hold logits");
  gs_cmd->add_option("--labels", gs.labels, "Label volume");
  gs_cmd->add_option("--dir", gs.dir, "Directory of <id>_gt and <id>_prob_<c> volumes");
  gs_cmd->add_option("--num-classes", gs.num_classes, "Override num_classes of the label files");
  gs_cmd->add_option("--norm", gs.norm, "Gradient mass: l1 or l2")
      ->check(CLI::IsMember({"l1", "l2"}))
      ->capture_default_str();
  add_strata_params(gs_cmd, gs.strata);
  gs_cmd->add_option("--out", gs.out, "Output file (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    return report_error(err, 2, "usage", e.what());
  }

  try {
    if (*loss_cmd) run_loss(loss, g, out);
    if (*eval_cmd) run_eval(ev, g, err);
    if (*stats_cmd) run_stats(st, g, out);
    if (*synth_cmd) run_synth(sy, g);
    if (*gs_cmd) run_gradshare(gs, g, out);
  } catch (const InputError& e) {
    return report_error(err, 2, "input", e.what());
  } catch (const ComputeError& e) {
    return report_error(err, 1, "compute", e.what());
  } catch (const std::exception& e) {
    return report_error(err, 1, "compute", e.what());
  }
  return 0;
}

}  // namespace instseg
