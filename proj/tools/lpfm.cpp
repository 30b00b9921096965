#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lpfm/lpfm.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::vector<std::string> formats;
  std::vector<std::size_t> laplacian_heads;
  std::vector<double> drop_path;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "seed (replaces sweep.seeds)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--workers", o.workers, "concurrent sweep cells");
  cmd->add_option("--format", o.formats, "json|csv|svg, repeatable")->check(CLI::IsMember({"json", "csv", "svg"}));
  cmd->add_option("--laplacian-heads", o.laplacian_heads, "comma-separated k values")->delimiter(',');
  cmd->add_option("--drop-path", o.drop_path, "comma-separated drop-path rates")->delimiter(',');
}

lpfm::ExperimentConfig resolve(const Overrides& o) {
  lpfm::ExperimentConfig cfg = o.config.empty() ? lpfm::config_from_json(lpfm::json::object()) : lpfm::load_config(o.config);
  if (o.seed) cfg.sweep.seeds = {*o.seed};
  if (o.out) cfg.output.dir = *o.out;
  if (o.workers) cfg.workers = *o.workers;
  if (!o.formats.empty()) cfg.output.formats = o.formats;
  if (!o.laplacian_heads.empty()) cfg.sweep.laplacian_heads = o.laplacian_heads;
  if (!o.drop_path.empty()) cfg.sweep.drop_path = o.drop_path;
  cfg.validate();
  return cfg;
}

int report_outcome(const lpfm::ExperimentOutcome& out) {
  for (const auto& r : out.results) {
    if (r.ok)
      std::printf("%s  test_acc=%.4f  within_seq_frac=%.4f  cossim_last=%.4f  snr_last=%.4g\n",
                  r.cell.dir_name().c_str(), r.test_acc, r.within_seq_fraction, r.last_cossim, r.last_snr);
    else
      std::printf("%s  FAILED: %s\n", r.cell.dir_name().c_str(), r.error.c_str());
  }
  for (const auto& s : out.summary)
    std::printf("k=%zu dp=%g  acc %.4f +- %.4f over %zu runs\n", s.k, s.drop_path, s.acc_mean, s.acc_std, s.runs);
  return out.failures == 0 ? 0 : 1;
}

template <class S>
int write_dataset(const lpfm::ExperimentConfig& cfg) {
  const auto data = lpfm::load_data<S>(cfg);
  const lpfm::fs::path dir(cfg.output.dir);
  lpfm::fs::create_directories(dir);
  lpfm::save_dataset((dir / "train.lpds").string(), data.train);
  lpfm::save_dataset((dir / "test.lpds").string(), data.test);
  std::printf("wrote %zu train / %zu test sequences to %s\n", data.train.size(), data.test.size(), dir.c_str());
  return 0;
}

template <class S>
int analyze_run(const lpfm::fs::path& run, const std::vector<std::string>& formats) {
  const auto cc = lpfm::load_config((run / "config.json").string());
  const auto data = lpfm::load_data<S>(cc);
  const auto params = lpfm::load_checkpoint<S>((run / "checkpoint.lpfm").string(), cc.model);
  const auto rep = lpfm::analyze_split(cc, params, data);
  for (const auto& f : lpfm::emit_report(run, rep, formats.empty() ? cc.output.formats : formats, cc.model.num_classes))
    std::printf("wrote %s\n", (run / f).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplacian-attention transformer lab"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, sweep_o;
  auto* gen = app.add_subcommand("gen-data", "generate or convert the configured dataset to LPDS files");
  add_common(gen, gen_o);
  auto* trn = app.add_subcommand("train", "train one run (first value of each sweep axis)");
  add_common(trn, train_o);
  auto* swp = app.add_subcommand("sweep", "train and analyze every (k, drop_path, seed) cell");
  add_common(swp, sweep_o);

  std::string run_dir;
  std::vector<std::string> analyze_formats;
  auto* ana = app.add_subcommand("analyze", "recompute and emit the geometry report of a run");
  ana->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  ana->add_option("--format", analyze_formats, "json|csv|svg, repeatable")->check(CLI::IsMember({"json", "csv", "svg"}));

  std::string verify_dir;
  double verify_tol = 1e-9;
  auto* ver = app.add_subcommand("verify", "check a stored report against a recomputation from its checkpoint");
  ver->add_option("--run", verify_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  ver->add_option("--tol", verify_tol, "absolute tolerance");

  lpfm::DiffusionConfig dcfg;
  bool frozen = false;
  std::string diffuse_out;
  auto* dif = app.add_subcommand("diffuse", "iterate heat steps driven by attention weights");
  dif->add_option("--seq-len", dcfg.seq_len, "tokens");
  dif->add_option("--dim", dcfg.dim, "channels");
  dif->add_option("--steps", dcfg.steps, "Euler steps");
  dif->add_option("--dt", dcfg.dt, "step size in (0, 1]");
  dif->add_option("--weight-std", dcfg.weight_std, "query/key weight scale");
  dif->add_option("--seed", dcfg.seed, "seed");
  dif->add_flag("--frozen", frozen, "keep P from the initial state");
  dif->add_option("--out", diffuse_out, "trajectory CSV path (stdout if omitted)");

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* gck = app.add_subcommand("grad-check", "compare tape gradients with central differences");
  gck->add_option("--seed", gc_seed, "seed");
  gck->add_option("--tol", gc_tol, "max relative error per tensor");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(gen_o);
      return cfg.precision == "float32" ? write_dataset<float>(cfg) : write_dataset<double>(cfg);
    }
    if (*trn) {
      auto cfg = resolve(train_o);
      cfg.sweep = {{cfg.sweep.laplacian_heads.front()}, {cfg.sweep.drop_path.front()}, {cfg.sweep.seeds.front()}};
      return report_outcome(lpfm::run_experiment(cfg));
    }
    if (*swp) return report_outcome(lpfm::run_experiment(resolve(sweep_o)));
    if (*ana) {
      const auto cc = lpfm::load_config((lpfm::fs::path(run_dir) / "config.json").string());
      return cc.precision == "float32" ? analyze_run<float>(run_dir, analyze_formats)
                                       : analyze_run<double>(run_dir, analyze_formats);
    }
    if (*ver) {
      const auto v = lpfm::verify_run(verify_dir, verify_tol);
      for (const auto& p : v.problems) std::printf("mismatch %s\n", p.c_str());
      std::printf("%s: max deviation %.3g\n", v.ok() ? "verified" : "FAILED", v.max_deviation);
      return v.ok() ? 0 : 1;
    }
    if (*dif) {
      dcfg.mode = frozen ? lpfm::PMode::Frozen : lpfm::PMode::Recomputed;
      const auto tr = lpfm::diffusion_trajectory<double>(dcfg);
      std::string csv = "step,row_spread,cossim\n";
      for (const auto& p : tr.points)
        csv += std::to_string(p.step) + "," + lpfm::fmt_real(p.row_spread) + "," + lpfm::fmt_real(p.cossim) + "\n";
      if (diffuse_out.empty()) std::cout << csv;
      else lpfm::write_text(diffuse_out, csv);
      return 0;
    }
    if (*gck) {
      const auto cfg = lpfm::gradcheck_model_config();
      const lpfm::RngState rng(gc_seed);
      const auto params = lpfm::init_params<double>(cfg, rng.split(1));
      lpfm::SyntheticSpec spec;
      spec.classes = cfg.num_classes;
      spec.per_class = 2;
      spec.test_per_class = 0;
      spec.seq_len = cfg.seq_len;
      spec.dim = cfg.token_dim;
      spec.seed = gc_seed;
      const auto batch = lpfm::gen_synthetic<double>(spec).train;
      bool ok = true;
      for (const auto& t : lpfm::gradient_check(cfg, params, batch)) {
        const bool pass = t.rel_error <= gc_tol;
        ok = ok && pass;
        std::printf("%-32s %6zu  rel_err=%.3e  %s\n", t.name.c_str(), t.size, t.rel_error, pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const lpfm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
