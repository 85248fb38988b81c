#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "basis/core.hpp"
#include "basis/eval.hpp"
#include "basis/io.hpp"
#include "basis/parallel.hpp"
#include "basis/priors.hpp"
#include "basis/sampler.hpp"
#include "basis/scorenet.hpp"
#include "basis/tasks.hpp"
#include "basis/toy.hpp"

namespace basis {

enum class TaskKind { separate, colorize, train_scorenet, eval, grad_experiment, ablation };

inline TaskKind parse_task(const std::string& name) {
  if (name == "separate") return TaskKind::separate;
  if (name == "colorize") return TaskKind::colorize;
  if (name == "train-scorenet") return TaskKind::train_scorenet;
  if (name == "eval") return TaskKind::eval;
  if (name == "grad-experiment") return TaskKind::grad_experiment;
  if (name == "ablation") return TaskKind::ablation;
  throw Error(Errc::config_error, "unknown task '" + name + "'");
}

struct RunOverrides {
  std::optional<std::string> task;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::separate;
  std::string task_name = "separate";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;

  // dataset
  std::string dataset = "toy-bars";
  std::size_t dataset_count = 10;
  std::uint64_t dataset_seed = 0;
  std::size_t dataset_side = 8;
  std::size_t dataset_dim = 64;
  double dataset_variance = 0.01;
  std::string images_path, labels_path, csv_path;
  std::vector<std::size_t> csv_shape;
  bool csv_labeled = false;
  std::size_t dataset_limit = 0;

  // prior
  std::string prior = "empirical";
  double prior_mean = 0.0;
  double prior_variance = 1.0;
  std::string gmm_path, weights_path;

  // mixtures
  std::size_t k = 2;
  std::vector<double> alpha;
  Pairing pairing;
  std::size_t cases = 10;
  std::size_t best_of = 1;
  std::size_t export_images = 4;
  std::size_t mmd_samples = 500;

  SamplerConfig sampler;

  std::size_t oracle_chains = 0;
  std::size_t oracle_case = 0;

  DsmConfig dsm;
  std::vector<std::size_t> hidden{128, 128};
  bool zero_final = true;
  std::size_t cosine_samples = 1000;

  std::size_t grad_samples = 1000;
  std::size_t ablation_seeds = 100;

  /// Reads every known key, applies overrides, then rejects unknown keys and
  /// missing paths so a bad config never starts a partial run.
  static ExperimentConfig from(const Config& cfg, const RunOverrides& o = {}) {
    ExperimentConfig c;
    const std::string file_task = cfg.str("task", o.task ? *o.task : std::string("separate"));
    if (o.task && file_task != *o.task)
      throw Error(Errc::config_error, "config task '" + file_task + "' conflicts with subcommand '" + *o.task + "'");
    c.task_name = file_task;
    c.task = parse_task(c.task_name);
    c.seed = cfg.integer("seed", 0);
    if (o.seed) c.seed = *o.seed;
    c.jobs = static_cast<std::size_t>(cfg.integer("jobs", default_jobs()));
    if (o.jobs) c.jobs = *o.jobs;
    require(c.jobs >= 1, Errc::config_error, "key 'jobs' must be >= 1");
    c.out = cfg.str("out", "runs/" + c.task_name);
    if (o.out) c.out = *o.out;

    c.dataset = cfg.choice("dataset", {"toy-bars", "toy-color-bars", "toy-points", "toy-gmm2d", "idx", "csv"},
                           std::string(default_dataset(c.task)));
    c.dataset_count = cfg.integer("dataset.count", default_count(c.task));
    c.dataset_seed = cfg.integer("dataset.seed", 0);
    c.dataset_side = cfg.integer("dataset.side", 8);
    c.dataset_dim = cfg.integer("dataset.dim", 64);
    c.dataset_variance = cfg.real("dataset.variance", 0.01);
    c.images_path = cfg.str("dataset.images", std::string());
    c.labels_path = cfg.str("dataset.labels", std::string());
    c.csv_path = cfg.str("dataset.path", std::string());
    if (cfg.has("dataset.shape"))
      for (double v : cfg.reals("dataset.shape")) {
        require(v >= 1 && v == std::floor(v), Errc::config_error, "key 'dataset.shape' expects positive integers");
        c.csv_shape.push_back(static_cast<std::size_t>(v));
      }
    c.csv_labeled = cfg.boolean("dataset.labeled", false);
    c.dataset_limit = cfg.integer("dataset.limit", 0);

    c.prior = cfg.choice("prior", {"empirical", "gaussian", "gmm", "scorenet"}, std::string("empirical"));
    c.prior_mean = cfg.real("prior.mean", 0.0);
    c.prior_variance = cfg.real("prior.variance", 1.0);
    c.gmm_path = cfg.str("prior.gmm", std::string());
    c.weights_path = cfg.str("prior.weights", std::string());

    c.k = cfg.integer("k", c.task == TaskKind::colorize ? 1 : 2);
    require(c.k >= 1, Errc::config_error, "key 'k' must be >= 1");
    if (cfg.has("alpha")) c.alpha = cfg.reals("alpha");
    else c.alpha.assign(c.k, 1.0 / static_cast<double>(c.k));
    require(c.alpha.size() == c.k, Errc::config_error, "key 'alpha' must list exactly k coefficients");
    for (double a : c.alpha) require(a != 0.0, Errc::config_error, "key 'alpha' entries must be non-zero");
    const std::string pairing = cfg.choice("pairing", {"agnostic", "split"}, std::string("agnostic"));
    if (pairing == "split") {
      const std::string groups = cfg.str("pairing.groups");
      std::vector<std::vector<int>> parsed;
      std::size_t start = 0;
      while (start <= groups.size()) {
        const std::size_t bar = std::min(groups.find(';', start), groups.size());
        std::vector<int> g;
        try {
          for (double v : parse_number_list(groups.substr(start, bar - start), ',', "key 'pairing.groups'"))
            g.push_back(static_cast<int>(v));
        } catch (const Error& e) {
          throw Error(Errc::config_error, e.what());
        }
        parsed.push_back(std::move(g));
        start = bar + 1;
      }
      require(parsed.size() == c.k, Errc::config_error, "key 'pairing.groups' must list k ';'-separated groups");
      c.pairing = Pairing::split(std::move(parsed));
    } else {
      cfg.str("pairing.groups", std::string());
    }
    c.cases = cfg.integer("cases", 10);
    c.best_of = cfg.integer("best_of", 1);
    require(c.best_of >= 1, Errc::config_error, "key 'best_of' must be >= 1");
    c.export_images = cfg.integer("export", 4);
    c.mmd_samples = cfg.integer("mmd.samples", 500);

    const double s_first = cfg.real("schedule.sigma_first", 1.0);
    const double s_last = cfg.real("schedule.sigma_last", 0.01);
    const std::size_t levels = cfg.integer("schedule.levels", 10);
    try {
      c.sampler.schedule = geometric_schedule(s_first, s_last, levels);
    } catch (const Error& e) {
      throw Error(Errc::config_error, std::string("schedule: ") + e.what());
    }
    c.sampler.anneal.delta = cfg.real("anneal.delta", 2e-5);
    require(c.sampler.anneal.delta > 0, Errc::config_error, "key 'anneal.delta' must be positive");
    c.sampler.anneal.steps_per_level = cfg.integer("anneal.steps", 100);
    require(c.sampler.anneal.steps_per_level >= 1, Errc::config_error, "key 'anneal.steps' must be >= 1");
    const std::string gamma = cfg.str("anneal.gamma2", std::string("sigma"));
    if (gamma != "sigma") {
      const double g2 = cfg.real("anneal.gamma2");
      require(g2 > 0, Errc::config_error, "key 'anneal.gamma2' must be 'sigma' or a positive number");
      c.sampler.anneal.gamma_coupling = GammaCoupling::fixed(g2);
    }
    c.sampler.anneal.seed = c.seed;
    const double lo = cfg.real("init.lo", 0.0), hi = cfg.real("init.hi", 1.0);
    require(lo < hi, Errc::config_error, "keys 'init.lo' < 'init.hi' required");
    c.sampler.init = UniformBox{lo, hi};

    c.oracle_chains = cfg.integer("oracle.chains", 0);
    c.oracle_case = cfg.integer("oracle.case", 0);

    c.dsm.batch_size = cfg.integer("train.batch", 64);
    c.dsm.learning_rate = cfg.real("train.lr", 0.05);
    c.dsm.epochs = cfg.integer("train.epochs", 100);
    c.dsm.seed = c.seed;
    require(c.dsm.batch_size >= 1 && c.dsm.learning_rate > 0, Errc::config_error,
            "keys 'train.batch' and 'train.lr' must be positive");
    if (cfg.has("train.hidden")) {
      c.hidden.clear();
      for (double v : cfg.reals("train.hidden")) {
        require(v >= 1 && v == std::floor(v), Errc::config_error, "key 'train.hidden' expects positive integers");
        c.hidden.push_back(static_cast<std::size_t>(v));
      }
    }
    c.zero_final = cfg.boolean("train.zero_final", true);
    c.cosine_samples = cfg.integer("train.cosine_samples", 1000);
    c.grad_samples = cfg.integer("grad.samples", 1000);
    require(c.grad_samples >= 2, Errc::config_error, "key 'grad.samples' must be >= 2");
    c.ablation_seeds = cfg.integer("ablation.seeds", 100);

    const auto unused = cfg.unused_keys();
    if (!unused.empty()) throw Error(Errc::config_error, "unknown key '" + unused.front() + "'");
    c.check_paths();
    return c;
  }

  void check_paths() const {
    namespace fs = std::filesystem;
    auto need = [](const std::string& key, const std::string& p) {
      if (p.empty()) throw Error(Errc::config_error, "key '" + key + "' is required");
      if (!fs::exists(p)) throw Error(Errc::config_error, "key '" + key + "' names a missing file: " + p);
    };
    auto maybe = [](const std::string& key, const std::string& p) {
      if (!p.empty() && !fs::exists(p)) throw Error(Errc::config_error, "key '" + key + "' names a missing file: " + p);
    };
    if (dataset == "idx") {
      need("dataset.images", images_path);
      maybe("dataset.labels", labels_path);
    }
    if (dataset == "csv") {
      need("dataset.path", csv_path);
      if (csv_shape.empty()) throw Error(Errc::config_error, "key 'dataset.shape' is required for csv datasets");
    }
    if (prior == "gmm") need("prior.gmm", gmm_path);
    if (prior == "scorenet") need("prior.weights", weights_path);
  }

  static const char* default_dataset(TaskKind t) {
    switch (t) {
      case TaskKind::colorize: return "toy-color-bars";
      case TaskKind::train_scorenet: return "toy-gmm2d";
      case TaskKind::grad_experiment: return "toy-points";
      default: return "toy-bars";
    }
  }
  static std::uint64_t default_count(TaskKind t) { return t == TaskKind::train_scorenet ? 50000 : 10; }
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

inline std::vector<LabeledSignal> load_dataset(const ExperimentConfig& c) {
  std::vector<LabeledSignal> data;
  if (c.dataset == "toy-bars") {
    data = toy::bars(c.dataset_count, c.dataset_seed, c.dataset_side);
  } else if (c.dataset == "toy-color-bars") {
    data = toy::color_bars(c.dataset_count, c.dataset_seed, c.dataset_side);
  } else if (c.dataset == "toy-points") {
    for (auto& s : toy::uniform_points(c.dataset_count, c.dataset_dim, c.dataset_seed)) data.push_back({std::move(s), -1});
  } else if (c.dataset == "toy-gmm2d") {
    auto gmm = toy::gmm2d(c.dataset_variance);
    for (auto& s : toy::sample_prior(*gmm, 0.0, c.dataset_count, c.dataset_seed)) data.push_back({std::move(s), -1});
  } else if (c.dataset == "idx") {
    data = read_idx(c.images_path, c.labels_path);
  } else {
    data = read_csv_dataset(c.csv_path, Shape(c.csv_shape), c.csv_labeled);
  }
  if (c.dataset_limit > 0 && data.size() > c.dataset_limit) data.resize(c.dataset_limit);
  require(!data.empty(), Errc::invalid_argument, "dataset is empty");
  return data;
}

/// CSV rows "weight,variance,mean_1,...,mean_d".
inline std::shared_ptr<GmmPrior> read_gmm_file(const std::string& path, const Shape& shape) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + path);
  std::vector<double> w, v;
  std::vector<Signal> mu;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const std::string ctx = path + " line " + std::to_string(lineno);
    auto row = parse_number_list(line, ',', ctx);
    require(row.size() == shape.size() + 2, Errc::format_error,
            "expected weight, variance and " + std::to_string(shape.size()) + " mean values in " + ctx);
    w.push_back(row[0]);
    v.push_back(row[1]);
    mu.emplace_back(shape, std::vector<double>(row.begin() + 2, row.end()));
  }
  return std::make_shared<GmmPrior>(std::move(w), std::move(mu), std::move(v));
}

inline PriorRef make_prior(const ExperimentConfig& c, const std::vector<Signal>& data, const Shape& shape) {
  if (c.prior == "empirical") return empirical_prior(data);
  if (c.prior == "gaussian") return std::make_shared<IsotropicGaussianPrior>(Signal(shape, c.prior_mean), c.prior_variance);
  if (c.prior == "gmm") return read_gmm_file(c.gmm_path, shape);
  auto net = std::make_shared<ScoreNet>(load_scorenet(c.weights_path));
  return std::make_shared<ScoreNetPrior>(std::move(net), shape);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trace_csv(const Trace& trace) {
  std::string out = "level,step,eta,gamma2,recon_sq,prior_sq,like_sq,snr\n";
  for (const auto& e : trace.entries)
    out += std::to_string(e.level) + "," + std::to_string(e.step) + "," + format_real(e.eta) + "," +
           format_real(e.gamma2) + "," + format_real(e.recon_sq) + "," + format_real(e.prior_sq) + "," +
           format_real(e.like_sq) + "," + format_real(e.snr) + "\n";
  return out;
}

inline bool image_shaped(const Shape& s) { return s.rank() == 3 && (s[0] == 1 || s[0] == 3); }

inline std::string case_dir(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04zu/", c);
  return buf;
}

inline void write_log_density(JsonWriter& j, const std::optional<LogDensityReport>& r) {
  j.key("log_density");
  if (!r) {
    j.null();
    return;
  }
  j.begin_object();
  j.field("mean_outputs", r->mean_outputs);
  j.field("mean_test", r->mean_test);
  j.field("se_outputs", r->se_outputs);
  j.field("se_test", r->se_test);
  j.field("n_outputs", static_cast<std::uint64_t>(r->n_outputs));
  j.field("n_test", static_cast<std::uint64_t>(r->n_test));
  j.field("z_score", r->z_score());
  j.end_object();
}

inline void write_optional(JsonWriter& j, std::string_view key, const std::optional<double>& v) {
  j.key(key);
  if (v) j.value(*v);
  else j.null();
}

/// Stable-field metrics document. `extra` appends task-specific fields.
inline std::string emit_metrics(const MetricReport& r, const std::function<void(JsonWriter&)>& extra = {}) {
  JsonWriter j;
  j.begin_object();
  j.field("task", std::string_view(r.task));
  j.field("seed", r.seed);
  j.field("case_count", static_cast<std::uint64_t>(r.case_count()));
  j.field("has_ground_truth", r.has_ground_truth);
  const bool any = r.has_ground_truth && !r.cases.empty();
  write_optional(j, "mean_psnr_pair", any ? std::optional<double>(r.mean_pair_psnr()) : std::nullopt);
  write_optional(j, "mean_psnr_component", any ? std::optional<double>(r.mean_component_psnr()) : std::nullopt);
  j.field("psnr_per_case", r.pair_psnrs());
  std::vector<double> comp;
  for (const auto& c : r.cases) comp.insert(comp.end(), c.component_psnr.begin(), c.component_psnr.end());
  j.field("psnr_per_component", comp);
  const Histogram h = r.psnr_histogram();
  j.key("psnr_histogram").begin_object();
  j.field("bin_edges", h.bin_edges);
  std::vector<std::uint64_t> counts(h.counts.begin(), h.counts.end());
  j.field("counts", counts);
  j.end_object();
  std::vector<double> max_abs, mean_sq;
  for (const auto& c : r.cases) {
    max_abs.push_back(c.recon.max_abs);
    mean_sq.push_back(c.recon.mean_sq);
  }
  j.key("reconstruction").begin_object();
  j.field("max_abs", max_abs);
  j.field("mean_sq", mean_sq);
  j.field("fraction_within_quantum", r.fraction_within_quantum());
  j.end_object();
  write_optional(j, "oracle_tv", r.oracle_tv);
  write_optional(j, "mmd", r.mmd);
  write_optional(j, "mmd_average_baseline", r.mmd_baseline);
  write_log_density(j, r.log_density);
  if (extra) extra(j);
  j.end_object();
  return j.finish();
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Signal> head(const std::vector<Signal>& v, std::size_t n) {
  return std::vector<Signal>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size())));
}

inline std::vector<Signal> flatten_sets(const std::vector<ComponentSet>& sets, std::size_t limit) {
  std::vector<Signal> out;
  for (const auto& s : sets)
    for (const auto& c : s) {
      if (out.size() >= limit) return out;
      out.push_back(c);
    }
  return out;
}

/// Chains for the tuple-posterior comparison on one mixture.
inline double oracle_tv(const PriorSet& priors, const MixingOperator& op, const Signal& m,
                        const std::vector<Signal>& data, const SamplerConfig& config, std::size_t chains,
                        const RngStream& rng, std::size_t jobs) {
  SamplerConfig quiet = config;
  quiet.record_trace = false;
  std::vector<std::vector<std::size_t>> snapped(chains);
  parallel_for(chains, jobs, [&](std::size_t j) {
    snapped[j] = snap_to_dataset(basis_separate(priors, op, m, quiet, rng.substream(j)).components, data);
  });
  const double sl = config.schedule.last();
  const TuplePosterior oracle =
      tuple_posterior_oracle(data, m, op.alpha(), config.anneal.gamma_coupling.gamma2(sl), sl * sl);
  return tv_distance(tuple_frequencies(snapped, data.size(), op.k()), oracle);
}

inline constexpr std::uint64_t kOracleStream = 0x0A11CE;

}  // namespace detail

inline RunDirectory run_separate(const ExperimentConfig& c) {
  const auto data = load_dataset(c);
  const auto signals = toy::signals(data);
  const Shape shape = signals.front().shape();
  const auto op = MixingOperator::linear_sum(c.alpha, shape);
  const PriorSet priors(make_prior(c, signals, shape));
  const auto mixes = make_mixture_set(data, c.cases, c.pairing, op, c.seed);
  const RngStream root(c.seed);

  std::vector<ComponentSet> outputs(mixes.size());
  Trace trace0;
  parallel_for(mixes.size(), c.jobs, [&](std::size_t i) {
    const RngStream rng = root.substream(i);
    SamplerConfig cfg = c.sampler;
    cfg.record_trace = (i == 0);
    if (c.best_of > 1) {
      outputs[i] = best_of_n(priors, op, mixes[i].mixture, c.best_of, cfg, rng).components;
      if (i == 0) trace0 = basis_separate(priors, op, mixes[i].mixture, cfg, rng.substream(0)).trace;
    } else {
      auto r = basis_separate(priors, op, mixes[i].mixture, cfg, rng);
      outputs[i] = std::move(r.components);
      if (i == 0) trace0 = std::move(r.trace);
    }
  });

  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  for (std::size_t i = 0; i < mixes.size(); ++i)
    report.cases.push_back(evaluate_case(mixes[i].mixture, outputs[i], mixes[i].ground_truth, op));

  std::optional<MetricReport> baseline;
  std::vector<ComponentSet> averages;
  if (op.equal_coefficients()) {
    baseline.emplace();
    for (const auto& mc : mixes) {
      averages.push_back(average_baseline(mc.mixture, op));
      baseline->cases.push_back(evaluate_case(mc.mixture, averages.back(), mc.ground_truth, op));
    }
  }
  const auto held_out = detail::head(signals, c.mmd_samples);
  const auto separated = detail::flatten_sets(outputs, c.mmd_samples);
  if (separated.size() >= 2 && held_out.size() >= 2) {
    const double h = median_heuristic_bandwidth(separated, held_out);
    report.mmd = mmd_rbf(separated, held_out, h);
    const auto avg = detail::flatten_sets(averages, c.mmd_samples);
    if (avg.size() >= 2) report.mmd_baseline = mmd_rbf(avg, held_out, h);
  }
  if (priors.has_log_density() && !outputs.empty())
    report.log_density = log_density_report(priors.at(0), outputs, held_out, c.sampler.schedule.last());
  if (c.oracle_chains > 0 && c.prior == "empirical" && !mixes.empty()) {
    const std::size_t which = std::min(c.oracle_case, mixes.size() - 1);
    report.oracle_tv = detail::oracle_tv(priors, op, mixes[which].mixture, signals, c.sampler, c.oracle_chains,
                                         root.substream(detail::kOracleStream), c.jobs);
  }

  RunDirectory dir(c.out);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            j.key("average_baseline");
            if (!baseline) {
              j.null();
            } else {
              j.begin_object();
              j.field("mean_psnr_pair", baseline->mean_pair_psnr());
              j.field("mean_psnr_component", baseline->mean_component_psnr());
              j.end_object();
            }
            j.field("best_of", static_cast<std::uint64_t>(c.best_of));
            std::vector<std::uint64_t> sources;
            for (const auto& mc : mixes)
              for (auto s : mc.source_indices) sources.push_back(s);
            j.field("source_indices", sources);
          }));
  if (!trace0.entries.empty()) dir.add("trace.csv", trace_csv(trace0));
  if (image_shaped(shape)) {
    for (std::size_t i = 0; i < std::min(c.export_images, mixes.size()); ++i) {
      const std::string d = case_dir(i);
      dir.add(d + "mixture.pgm", encode_pnm(mixes[i].mixture));
      const auto& perm = report.cases[i].permutation;
      for (std::size_t j = 0; j < op.k(); ++j) {
        dir.add(d + "truth_" + std::to_string(j) + ".pgm", encode_pnm(mixes[i].ground_truth[j]));
        dir.add(d + "estimate_" + std::to_string(j) + ".pgm", encode_pnm(outputs[i][perm[j]]));
      }
    }
  }
  return dir;
}

inline RunDirectory run_colorize(const ExperimentConfig& c) {
  const auto data = load_dataset(c);
  const auto signals = toy::signals(data);
  const Shape shape = signals.front().shape();
  const auto op = MixingOperator::channel_collapse(shape);
  const PriorSet priors(make_prior(c, signals, shape));
  const RngStream root(c.seed);

  std::vector<std::size_t> picks(c.cases);
  for (std::size_t i = 0; i < c.cases; ++i) {
    RngStream r = root.substream(i).substream(1);
    picks[i] = r.below(signals.size());
  }
  std::vector<Signal> grays(c.cases);
  std::vector<ComponentSet> outputs(c.cases);
  Trace trace0;
  parallel_for(c.cases, c.jobs, [&](std::size_t i) {
    grays[i] = op.apply({signals[picks[i]]});
    SamplerConfig cfg = c.sampler;
    cfg.record_trace = (i == 0);
    auto r = basis_separate(priors, op, grays[i], cfg, root.substream(i));
    outputs[i] = std::move(r.components);
    if (i == 0) trace0 = std::move(r.trace);
  });

  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  for (std::size_t i = 0; i < c.cases; ++i)
    report.cases.push_back(evaluate_case(grays[i], outputs[i], {signals[picks[i]]}, op));

  RunDirectory dir(c.out);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            std::vector<std::uint64_t> src(picks.begin(), picks.end());
            j.field("source_indices", src);
          }));
  if (!trace0.entries.empty()) dir.add("trace.csv", trace_csv(trace0));
  if (image_shaped(shape)) {
    for (std::size_t i = 0; i < std::min(c.export_images, c.cases); ++i) {
      const std::string d = case_dir(i);
      dir.add(d + "gray.pgm", encode_pnm(grays[i]));
      dir.add(d + "truth.ppm", encode_pnm(signals[picks[i]]));
      dir.add(d + "estimate.ppm", encode_pnm(outputs[i].front()));
    }
  }
  return dir;
}

inline RunDirectory run_train_scorenet(const ExperimentConfig& c) {
  const auto data = load_dataset(c);
  const auto signals = toy::signals(data);
  ScoreNetOptions options;
  options.hidden = c.hidden;
  options.zero_final_layer = c.zero_final;
  options.seed = c.seed;
  const std::size_t dim = signals.front().size();
  std::vector<Signal> flat;
  flat.reserve(signals.size());
  for (const auto& s : signals) flat.push_back(Signal::vec(s.values()));
  auto net = std::make_shared<ScoreNet>(dim, c.sampler.schedule, options);
  const TrainReport rep = train_dsm(*net, flat, c.dsm);

  std::vector<double> cosine;
  if (c.dataset == "toy-gmm2d" && c.cosine_samples > 0) {
    const ScoreNetPrior model(net, Shape{dim});
    cosine = score_cosine_per_level(*toy::gmm2d(c.dataset_variance), model, c.sampler.schedule, c.cosine_samples,
                                    RngStream(c.seed).substream(0xC05));
  }

  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  report.has_ground_truth = false;
  std::string curve = "epoch,loss\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) curve += std::to_string(e) + "," + format_real(rep.epoch_loss[e]) + "\n";
  RunDirectory dir(c.out);
  dir.add("weights.bsn", encode_scorenet(*net));
  dir.add("loss.csv", curve);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            j.field("initial_loss", rep.initial_loss);
            j.field("epoch_loss", rep.epoch_loss);
            j.field("updates", static_cast<std::uint64_t>(rep.updates));
            j.field("sigmas", c.sampler.schedule.sigmas());
            j.field("cosine_per_level", cosine);
          }));
  return dir;
}

inline RunDirectory run_eval(const ExperimentConfig& c) {
  const auto data = load_dataset(c);
  const auto signals = toy::signals(data);
  const Shape shape = signals.front().shape();
  const auto op = MixingOperator::linear_sum(c.alpha, shape);
  const auto mixes = make_mixture_set(data, c.cases, c.pairing, op, c.seed);

  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  std::vector<ComponentSet> averages;
  for (const auto& mc : mixes) {
    averages.push_back(average_baseline(mc.mixture, op));
    report.cases.push_back(evaluate_case(mc.mixture, averages.back(), mc.ground_truth, op));
  }
  if (c.oracle_chains > 0 && !mixes.empty()) {
    require(c.prior == "empirical", Errc::unsupported_prior, "the tuple oracle needs the empirical prior");
    const PriorSet priors(make_prior(c, signals, shape));
    const std::size_t which = std::min(c.oracle_case, mixes.size() - 1);
    report.oracle_tv = detail::oracle_tv(priors, op, mixes[which].mixture, signals, c.sampler, c.oracle_chains,
                                         RngStream(c.seed).substream(detail::kOracleStream), c.jobs);
  }
  RunDirectory dir(c.out);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            j.field("method", std::string_view("average_baseline"));
            j.field("oracle_chains", static_cast<std::uint64_t>(c.oracle_chains));
          }));
  return dir;
}

inline RunDirectory run_grad_experiment(const ExperimentConfig& c) {
  const auto data = load_dataset(c);
  const auto signals = toy::signals(data);
  const Shape shape = signals.front().shape();
  const PriorRef prior = make_prior(c, signals, shape);
  const RngStream rng(c.seed);
  RngStream probe(0);
  const auto stats = prior->sample(c.sampler.schedule.first(), probe).has_value()
                         ? grad_proportionality_experiment(*prior, c.sampler.schedule, c.grad_samples, rng)
                         : grad_proportionality_experiment(*prior, signals, c.sampler.schedule, c.grad_samples, rng);
  std::string table = "level,sigma,sigma_rms_score,std_error\n";
  std::vector<double> values, errors;
  for (const auto& s : stats) {
    table += std::to_string(s.level) + "," + format_real(s.sigma) + "," + format_real(s.value) + "," +
             format_real(s.std_error) + "\n";
    values.push_back(s.value);
    errors.push_back(s.std_error);
  }
  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  report.has_ground_truth = false;
  RunDirectory dir(c.out);
  dir.add("grad_table.csv", table);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            j.field("sigmas", c.sampler.schedule.sigmas());
            j.field("sigma_rms_score", values);
            j.field("std_error", errors);
            j.field("sqrt_dim", std::sqrt(static_cast<double>(shape.size())));
            j.field("min_pairwise_distance", signals.size() > 1 ? toy::min_pairwise_distance(signals) : 0.0);
          }));
  return dir;
}

struct AblationOutcome {
  std::vector<double> langevin, annealed_deterministic, plain_ascent;  // final log posterior per seed
  Trace trace_langevin, trace_annealed, trace_plain;                    // seed 0

  double fraction_ordered() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < langevin.size(); ++i)
      if (langevin[i] > annealed_deterministic[i] && annealed_deterministic[i] > plain_ascent[i]) ++n;
    return langevin.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(langevin.size());
  }
};

/// Runs the three dynamics from a shared initialization for each seed.
inline AblationOutcome run_ablation_benchmark(const toy::AblationBenchmark& b, std::size_t seeds, std::uint64_t seed,
                                              std::size_t jobs) {
  AblationOutcome out;
  out.langevin.resize(seeds);
  out.annealed_deterministic.resize(seeds);
  out.plain_ascent.resize(seeds);
  const PriorSet priors(b.prior);
  const RngStream root(seed);
  std::vector<Trace> tl(seeds), ta(seeds), tp(seeds);
  parallel_for(seeds, jobs, [&](std::size_t s) {
    SamplerConfig cfg = b.config;
    cfg.record_trace = (s == 0);
    const RngStream rng = root.substream(s);
    auto l = basis_separate(priors, b.op, b.mixture, cfg, rng);
    auto a = baseline_ascend(priors, b.op, b.mixture, AnnealedDeterministic{}, cfg, rng);
    auto p = baseline_ascend(priors, b.op, b.mixture, PlainAscent{b.lambda}, cfg, rng);
    out.langevin[s] = toy::final_log_posterior(b, l.components);
    out.annealed_deterministic[s] = toy::final_log_posterior(b, a.components);
    out.plain_ascent[s] = toy::final_log_posterior(b, p.components);
    if (s == 0) {
      tl[0] = std::move(l.trace);
      ta[0] = std::move(a.trace);
      tp[0] = std::move(p.trace);
    }
  });
  if (seeds > 0) {
    out.trace_langevin = std::move(tl[0]);
    out.trace_annealed = std::move(ta[0]);
    out.trace_plain = std::move(tp[0]);
  }
  return out;
}

inline RunDirectory run_ablation(const ExperimentConfig& c) {
  const auto bench = toy::ablation_benchmark();
  const auto res = run_ablation_benchmark(bench, c.ablation_seeds, c.seed, c.jobs);
  std::size_t la = 0, ap = 0;
  for (std::size_t i = 0; i < res.langevin.size(); ++i) {
    la += res.langevin[i] > res.annealed_deterministic[i];
    ap += res.annealed_deterministic[i] > res.plain_ascent[i];
  }
  const double n = std::max<double>(1.0, static_cast<double>(res.langevin.size()));
  MetricReport report;
  report.task = c.task_name;
  report.seed = c.seed;
  report.has_ground_truth = false;
  RunDirectory dir(c.out);
  dir.add("metrics.json", emit_metrics(report, [&](JsonWriter& j) {
            j.field("seeds", static_cast<std::uint64_t>(c.ablation_seeds));
            j.field("fraction_ordered", res.fraction_ordered());
            j.field("fraction_langevin_above_deterministic", static_cast<double>(la) / n);
            j.field("fraction_deterministic_above_plain", static_cast<double>(ap) / n);
            j.field("final_log_posterior_langevin", res.langevin);
            j.field("final_log_posterior_annealed_deterministic", res.annealed_deterministic);
            j.field("final_log_posterior_plain_ascent", res.plain_ascent);
          }));
  if (!res.trace_langevin.entries.empty()) {
    dir.add("trace_langevin.csv", trace_csv(res.trace_langevin));
    dir.add("trace_annealed_deterministic.csv", trace_csv(res.trace_annealed));
    dir.add("trace_plain_ascent.csv", trace_csv(res.trace_plain));
  }
  return dir;
}

/// Runs the configured task and returns its artifacts without touching disk.
inline RunDirectory run_experiment(const ExperimentConfig& c) {
  switch (c.task) {
    case TaskKind::separate: return run_separate(c);
    case TaskKind::colorize: return run_colorize(c);
    case TaskKind::train_scorenet: return run_train_scorenet(c);
    case TaskKind::eval: return run_eval(c);
    case TaskKind::grad_experiment: return run_grad_experiment(c);
    case TaskKind::ablation: return run_ablation(c);
  }
  throw Error(Errc::config_error, "unknown task");
}

}  // namespace basis
