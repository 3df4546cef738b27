// lmhp: simulate, train, evaluate, benchmark and inspect Lazy MHP models.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lmhp/lmhp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCascadeFormatVersion = 1;
constexpr int kTruthFormatVersion = 1;
constexpr int kManifestVersion = 1;

struct Options {
  // simulate
  std::size_t nodes = 50;
  std::size_t sequences = 1000;
  double beta = 1.0;
  double mu = 1e-4;
  double horizon = 100.0;
  std::string rank = "full";
  // train
  std::string data;
  std::string init;
  std::size_t dim = 20;
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  bool shuffle = false;
  std::size_t log_every = 1;
  // eval / inspect
  std::string model;
  std::string truth;
  std::size_t top_k = 5;
  bool export_alpha = false;
  std::size_t max_alpha_entities = 2000;
  // bench
  std::string engine = "both";
  std::size_t repetitions = 5;
  // common
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string out;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t resolve_threads(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("LMHP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw UsageError("LMHP_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json flags_of(const CLI::App& app) {
  json flags = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      flags[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      flags[name] = opt->get_default_str();
    }
  }
  return flags;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

void write_manifest(const fs::path& dir, const CLI::App& sub, std::uint64_t seed, std::size_t threads,
                    const std::vector<std::string>& outputs) {
  json m = {{"tool", "lmhp"},
            {"manifest_version", kManifestVersion},
            {"subcommand", sub.get_name()},
            {"flags", flags_of(sub)},
            {"seed", seed},
            {"threads", threads},
            {"formats",
             {{"cascades", kCascadeFormatVersion},
              {"checkpoint", lmhp::kCheckpointVersion},
              {"truth", kTruthFormatVersion}}},
            {"outputs", outputs}};
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  f << m.dump(2) << '\n';
  if (!f.flush()) throw lmhp::InvalidArgument("failed writing manifest");
}

template <class Fn>
void write_text(const fs::path& path, Fn&& fn) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw lmhp::InvalidArgument("cannot write " + path.string());
  fn(f);
  if (!f.flush()) throw lmhp::InvalidArgument("failed writing " + path.string());
}

std::size_t parse_rank(const std::string& rank, std::size_t nodes) {
  if (rank == "full") return 0;
  std::size_t pos = 0;
  unsigned long k = 0;
  try {
    k = std::stoul(rank, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != rank.size() || k == 0 || k > nodes) throw UsageError("--rank must be 'full' or an integer in [1, nodes]");
  return k;
}

std::string config_digest(const json& flags) {
  json stable = flags;
  for (const char* path_flag : {"out", "data", "init", "model", "truth"}) stable.erase(path_flag);
  return fnv1a_hex(stable.dump());
}

int run_simulate(const Options& o, const CLI::App& sub) {
  if (o.sequences < 1) throw UsageError("sequences must be ≥ 1");
  if (o.nodes < 2) throw UsageError("nodes must be ≥ 2");
  if (!(o.horizon > 0.0)) throw UsageError("horizon must be positive");
  const std::size_t rank = parse_rank(o.rank, o.nodes);
  const std::size_t threads = resolve_threads(o.threads);
  const fs::path dir = prepare_out(o.out);
  const lmhp::HawkesTruth truth = lmhp::make_synthetic_truth(o.nodes, o.beta, o.mu, rank, o.seed);
  const lmhp::Dataset data =
      lmhp::simulate_dataset(truth, o.sequences, o.horizon, lmhp::derive_seed(o.seed, 1), threads);
  lmhp::write_cascades(dir / "cascades.tsv", lmhp::make_cascades(data));
  lmhp::write_truth(dir / "truth.json", truth);
  write_manifest(dir, sub, o.seed, threads, {"cascades.tsv", "truth.json"});
  std::cout << "sequences=" << data.num_sequences() << " events=" << data.num_events()
            << " spectral_radius=" << truth.alpha.spectral_note << '\n';
  return 0;
}

int run_train(const Options& o, const CLI::App& sub) {
  if (o.dim < 1) throw UsageError("dim must be ≥ 1");
  if (o.epochs < 1) throw UsageError("epochs must be ≥ 1");
  if (o.log_every < 1) throw UsageError("log-every must be ≥ 1");
  const std::size_t threads = resolve_threads(o.threads);
  const fs::path dir = prepare_out(o.out);
  const lmhp::Cascades cascades = lmhp::parse_cascades(fs::path(o.data));

  lmhp::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.learning_rate;
  cfg.dim = o.dim;
  cfg.threads = threads;
  cfg.seed = o.seed;
  cfg.shuffle = o.shuffle;
  cfg.log_every = o.log_every;

  std::optional<lmhp::ModelParams> init;
  if (!o.init.empty()) {
    auto [params, meta] = lmhp::read_checkpoint(o.init);
    if (params.num_entities != cascades.data.num_entities())
      throw lmhp::InvalidArgument("--init checkpoint has a different number of entities");
    init = std::move(params);
  }

  lmhp::CheckpointMeta meta;
  meta.seed = o.seed;
  meta.config_digest = config_digest(flags_of(sub));
  meta.vocabulary = cascades.labels;
  lmhp::TrainHooks hooks;
  hooks.progress = &std::cout;
  hooks.checkpoint = [&](const lmhp::ModelParams& p, const lmhp::EpochRecord& r) {
    lmhp::CheckpointMeta m = meta;
    m.epoch = r.epoch;
    lmhp::write_checkpoint(dir / "checkpoint.ckpt", p, m);
  };
  const auto [params, report] = threads > 1 ? lmhp::train_parallel(cascades.data, cfg, init, hooks)
                                            : lmhp::train(cascades.data, cfg, init, hooks);
  meta.epoch = report.epochs.size();
  lmhp::write_checkpoint(dir / "model.ckpt", params, meta);
  fs::remove(dir / "checkpoint.ckpt");
  write_text(dir / "train_report.tsv", [&](std::ostream& f) { lmhp::write_train_report_tsv(f, report); });
  write_manifest(dir, sub, o.seed, threads, {"model.ckpt", "train_report.tsv"});
  return 0;
}

int run_eval(const Options& o, const CLI::App& sub) {
  if (o.truth.empty() && o.data.empty()) throw UsageError("eval needs --truth and/or --data");
  const fs::path dir = prepare_out(o.out);
  const lmhp::ModelParams params = lmhp::read_checkpoint(o.model).first;
  std::vector<std::string> outputs;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  if (!o.data.empty()) {
    const lmhp::Cascades held_out = lmhp::parse_cascades(fs::path(o.data));
    if (held_out.data.num_entities() != params.num_entities)
      throw lmhp::InvalidArgument("held-out data and model have different numbers of entities");
    loglik = lmhp::holdout_loglik(params, held_out.data);
    write_text(dir / "holdout.tsv", [&](std::ostream& f) {
      f << "sequences\tevents\tloglik_per_event\n"
        << held_out.data.num_sequences() << '\t' << held_out.data.num_events() << '\t'
        << lmhp::detail::format_real(loglik) << '\n';
    });
    outputs.push_back("holdout.tsv");
  }
  if (!o.truth.empty()) {
    lmhp::RecoveryReport r = lmhp::rmse_params(params, lmhp::read_truth(o.truth));
    r.loglik = loglik;
    write_text(dir / "recovery.tsv", [&](std::ostream& f) { lmhp::write_recovery_tsv(f, r); });
    outputs.push_back("recovery.tsv");
    std::cout << "rmse_mu=" << r.rmse_mu << " rmse_beta=" << r.rmse_beta << " rmse_alpha=" << r.rmse_alpha << '\n';
  }
  if (!o.data.empty()) std::cout << "loglik_per_event=" << loglik << '\n';
  write_manifest(dir, sub, o.seed, 1, outputs);
  return std::isfinite(loglik) || o.data.empty() ? 0 : 1;
}

int run_bench(const Options& o, const CLI::App& sub) {
  if (o.repetitions < 1) throw UsageError("repetitions must be ≥ 1");
  if (o.dim < 1) throw UsageError("dim must be ≥ 1");
  const fs::path dir = prepare_out(o.out);
  const lmhp::Cascades cascades = lmhp::parse_cascades(fs::path(o.data));
  const lmhp::ModelParams params = o.model.empty() ? lmhp::initial_params(cascades.data, o.dim, o.seed)
                                                   : lmhp::read_checkpoint(o.model).first;
  std::vector<lmhp::TimingRecord> records;
  if (o.engine == "dense" || o.engine == "both")
    records.push_back(lmhp::runtime_benchmark(lmhp::Engine::dense, params, cascades.data, o.repetitions));
  if (o.engine == "lazy" || o.engine == "both")
    records.push_back(lmhp::runtime_benchmark(lmhp::Engine::lazy, params, cascades.data, o.repetitions));
  write_text(dir / "timing.tsv", [&](std::ostream& f) {
    lmhp::write_timing_tsv(f, records, cascades.data.num_entities(), cascades.data.num_sequences());
  });
  for (const auto& r : records)
    std::cout << lmhp::engine_name(r.engine) << " median_s=" << r.median_seconds
              << " touches=" << r.entity_touches << '\n';
  write_manifest(dir, sub, o.seed, 1, {"timing.tsv"});
  return 0;
}

int run_inspect(const Options& o, const CLI::App& sub) {
  if (o.top_k < 1) throw UsageError("top-k must be ≥ 1");
  const fs::path dir = prepare_out(o.out);
  const auto [params, meta] = lmhp::read_checkpoint(o.model);
  auto label = [&](lmhp::EntityId x) {
    return meta.vocabulary.empty() ? std::to_string(x) : meta.vocabulary[x];
  };
  if (o.export_alpha && params.num_entities > o.max_alpha_entities)
    throw lmhp::InvalidArgument("refusing dense alpha export for " + std::to_string(params.num_entities) +
                                " entities (limit " + std::to_string(o.max_alpha_entities) +
                                ", raise with --max-alpha-entities)");
  std::vector<std::string> outputs{"factors.tsv"};
  write_text(dir / "factors.tsv", [&](std::ostream& f) {
    f << "factor\trank\tentity\tu\n";
    const std::size_t k = std::min(o.top_k, params.num_entities);
    std::vector<lmhp::EntityId> order(params.num_entities);
    for (std::size_t j = 0; j < params.dim; ++j) {
      std::iota(order.begin(), order.end(), lmhp::EntityId{0});
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](lmhp::EntityId a, lmhp::EntityId b) {
                          const double ua = params.u(a, j), ub = params.u(b, j);
                          return ua != ub ? ua > ub : a < b;
                        });
      for (std::size_t r = 0; r < k; ++r)
        f << j << '\t' << r + 1 << '\t' << label(order[r]) << '\t'
          << lmhp::detail::format_real(params.u(order[r], j)) << '\n';
    }
  });
  if (o.export_alpha) {
    write_text(dir / "alpha.tsv", [&](std::ostream& f) {
      for (lmhp::EntityId x = 0; x < params.num_entities; ++x) {
        for (lmhp::EntityId y = 0; y < params.num_entities; ++y)
          f << (y ? "\t" : "") << lmhp::detail::format_real(lmhp::alpha(params, x, y));
        f << '\n';
      }
    });
    outputs.push_back("alpha.tsv");
  }
  write_manifest(dir, sub, o.seed, 1, outputs);
  return 0;
}

int run_stats(const Options& o, const CLI::App& sub) {
  const fs::path dir = prepare_out(o.out);
  const lmhp::Cascades cascades = lmhp::parse_cascades(fs::path(o.data));
  const lmhp::DatasetStats s = lmhp::dataset_stats(cascades.data);
  write_text(dir / "active_fraction.tsv", [&](std::ostream& f) { lmhp::write_active_fraction_tsv(f, s); });
  write_text(dir / "event_counts.tsv", [&](std::ostream& f) {
    f << "events\tsequences\n";
    for (const auto& [events, count] : s.event_count_histogram) f << events << '\t' << count << '\n';
  });
  write_text(dir / "summary.tsv", [&](std::ostream& f) {
    f << "num_entities\tnum_sequences\tnum_events\tmean_active\tmedian_active_fraction\n"
      << s.num_entities << '\t' << s.num_sequences << '\t' << s.num_events << '\t'
      << lmhp::detail::format_real(s.mean_active) << '\t' << lmhp::detail::format_real(s.median_active_fraction)
      << '\n';
  });
  std::cout << "E=" << s.mean_active << " of " << s.num_entities << " entities\n";
  write_manifest(dir, sub, o.seed, 1, {"active_fraction.tsv", "event_counts.tsv", "summary.tsv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lazy multivariate Hawkes process toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Sample a synthetic ground truth and cascades");
  sim->add_option("--nodes", o.nodes, "Number of entities")->capture_default_str();
  sim->add_option("--sequences", o.sequences, "Number of sequences")->capture_default_str();
  sim->add_option("--beta", o.beta, "Global decay rate")->capture_default_str();
  sim->add_option("--mu", o.mu, "Baseline rate of every entity")->capture_default_str();
  sim->add_option("--horizon", o.horizon, "Observation window per sequence")->capture_default_str();
  sim->add_option("--rank", o.rank, "Influence matrix rank: full or K")->capture_default_str();

  auto* train = app.add_subcommand("train", "Fit a model to a cascade file");
  train->add_option("--data", o.data, "Cascade file")->required()->check(CLI::ExistingFile);
  train->add_option("--init", o.init, "Initial checkpoint")->check(CLI::ExistingFile);
  train->add_option("--dim", o.dim, "Factorization dimension")->capture_default_str();
  train->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", o.learning_rate, "Adam learning rate")->capture_default_str()->check(
      CLI::PositiveNumber);
  train->add_flag("--shuffle", o.shuffle, "Shuffle sequence order every epoch");
  train->add_option("--log-every", o.log_every, "Checkpoint interval in epochs")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Parameter recovery and held-out likelihood");
  eval->add_option("--model", o.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", o.truth, "Ground-truth file")->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "Held-out cascade file")->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Time dense and lazy gradient passes");
  bench->add_option("--data", o.data, "Cascade file")->required()->check(CLI::ExistingFile);
  bench->add_option("--model", o.model, "Checkpoint (default: warm-start parameters)")->check(CLI::ExistingFile);
  bench->add_option("--engine", o.engine, "dense, lazy or both")
      ->capture_default_str()
      ->check(CLI::IsMember({"dense", "lazy", "both"}));
  bench->add_option("--repetitions", o.repetitions, "Passes per engine")->capture_default_str();
  bench->add_option("--dim", o.dim, "Dimension of warm-start parameters")->capture_default_str();

  auto* inspect = app.add_subcommand("inspect", "Top entities per latent factor");
  inspect->add_option("--model", o.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  inspect->add_option("--top-k", o.top_k, "Entities per factor")->capture_default_str();
  inspect->add_flag("--export-alpha", o.export_alpha, "Also write the dense influence matrix");
  inspect->add_option("--max-alpha-entities", o.max_alpha_entities, "Largest |X| for --export-alpha")
      ->capture_default_str();

  auto* stats = app.add_subcommand("stats", "Sparsity statistics of a cascade file");
  stats->add_option("--data", o.data, "Cascade file")->required()->check(CLI::ExistingFile);

  for (CLI::App* sub : {sim, train, eval, bench, inspect, stats}) {
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  }
  for (CLI::App* sub : {sim, train})
    sub->add_option("--threads", o.threads, "Worker threads (default: LMHP_THREADS or 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return run_simulate(o, *sim);
    if (train->parsed()) return run_train(o, *train);
    if (eval->parsed()) return run_eval(o, *eval);
    if (bench->parsed()) return run_bench(o, *bench);
    if (inspect->parsed()) return run_inspect(o, *inspect);
    if (stats->parsed()) return run_stats(o, *stats);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
