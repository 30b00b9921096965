#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lpfm/checkpoint.hpp"
#include "lpfm/config.hpp"
#include "lpfm/dataset.hpp"
#include "lpfm/geometry.hpp"
#include "lpfm/report.hpp"
#include "lpfm/train.hpp"

namespace lpfm {

/// Loads or generates both splits as raw model inputs.
template <class S>
DatasetSplit<S> load_data(const ExperimentConfig& cfg) {
  const DataSpec& d = cfg.data;
  DatasetSplit<S> split;
  if (d.kind == "synthetic") {
    const auto gen = gen_synthetic<double>(d.synthetic);
    split = {gen.train.template cast<S>(), gen.test.template cast<S>()};
  } else if (d.kind == "lpds") {
    split = {load_dataset<S>(d.train_path), load_dataset<S>(d.test_path)};
  } else if (d.kind == "idx") {
    const std::size_t C = cfg.model.num_classes;
    split.train = images_to_dataset<S>(load_idx_images(d.train_images, d.train_labels, C), cfg.model.patch_size, C);
    split.test = images_to_dataset<S>(load_idx_images(d.test_images, d.test_labels, C), cfg.model.patch_size, C);
  } else {
    throw ConfigError("unknown data.kind '" + d.kind + "'");
  }
  for (const auto* ds : {&split.train, &split.test}) {
    if (ds->num_classes != cfg.model.num_classes)
      throw ConfigError("dataset has " + std::to_string(ds->num_classes) + " classes, model expects " +
                        std::to_string(cfg.model.num_classes));
    if (ds->size() > 0 && (ds->inputs.seq_len() != cfg.model.num_tokens() || ds->inputs.dim() != cfg.model.input_dim()))
      throw ConfigError("dataset token shape does not match the model input");
  }
  return split;
}

struct Cell {
  std::size_t k = 0;
  double drop_path = 0;
  std::uint64_t seed = 0;

  std::string dir_name() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "k%zu_dp%g_s%llu", k, drop_path, static_cast<unsigned long long>(seed));
    return buf;
  }
};

struct CellResult {
  Cell cell;
  bool ok = false;
  std::string error;
  double test_acc = 0;
  double within_seq_fraction = 0;
  double between_class_fraction = 0;
  double last_cossim = 0;
  double last_snr = 0;
  double equiangularity = 0;
};

/// The resolved single-cell config stored next to each run.
inline ExperimentConfig cell_config(const ExperimentConfig& cfg, const Cell& c) {
  ExperimentConfig out = cfg;
  out.assignment.k = c.k;
  out.model = cfg.cell_model(c.k, c.drop_path);
  out.seed = c.seed;
  out.sweep = SweepSpec{{c.k}, {c.drop_path}, {c.seed}};
  out.workers = 1;
  return out;
}

template <class S>
GeometryReport<S> analyze_split(const ExperimentConfig& cell_cfg, const ModelParams<S>& params,
                                const DatasetSplit<S>& data) {
  const LabeledDataset<S>& ds = cell_cfg.analysis.split == "train" ? data.train : data.test;
  AnalysisOptions opt;
  opt.pca_classes = cell_cfg.analysis.pca_classes;
  opt.sample_seed = cell_cfg.analysis.sample_seed;
  return analyze(cell_cfg.model, params, ds.inputs, ds.labels, opt);
}

template <class S>
CellResult run_cell(const ExperimentConfig& cfg, const Cell& cell, const DatasetSplit<S>& data, const fs::path& root) {
  CellResult res;
  res.cell = cell;
  try {
    const ExperimentConfig cc = cell_config(cfg, cell);
    const fs::path dir = root / cell.dir_name();
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cc).dump(2) + "\n");
    const TrainResult<S> tr = train<S>(cc.model, data.train, &data.test, cc.train, cell.seed);
    save_checkpoint(dir / "checkpoint.lpfm", cc.model, tr.params);
    write_text(dir / "metrics.csv", metrics_csv(tr.history));
    const GeometryReport<S> rep = analyze_split(cc, tr.params, data);
    emit_report(dir, rep, cc.output.formats, cc.model.num_classes);
    res.test_acc = tr.history.empty() ? 0.0 : tr.history.back().test_acc;
    res.within_seq_fraction = rep.anova.within_seq_fraction;
    res.between_class_fraction = rep.anova.between_class_fraction;
    res.last_cossim = rep.cossim.empty() ? 0.0 : rep.cossim.back();
    res.last_snr = rep.snr.empty() ? 0.0 : rep.snr.back();
    res.equiangularity = rep.ntc.nc.equiangularity_means;
    res.ok = true;
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (auto k : cfg.sweep.laplacian_heads)
    for (double dp : cfg.sweep.drop_path)
      for (auto s : cfg.sweep.seeds) cells.push_back({k, dp, s});
  return cells;
}

inline bool deterministic_env() {
  const char* v = std::getenv("LPFM_DETERMINISTIC");
  return v && std::string(v) == "1";
}

struct SummaryRow {
  std::size_t k = 0;
  double drop_path = 0;
  std::size_t runs = 0;
  double acc_mean = 0, acc_std = 0;
  double within_seq_fraction = 0, between_class_fraction = 0, last_cossim = 0, last_snr = 0, equiangularity = 0;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// One row per (k, drop_path) over the successful runs, in sweep order.
inline std::vector<SummaryRow> summarize(const ExperimentConfig& cfg, const std::vector<CellResult>& results) {
  std::vector<SummaryRow> rows;
  for (auto k : cfg.sweep.laplacian_heads)
    for (double dp : cfg.sweep.drop_path) {
      std::vector<double> acc, ws, bc, cs, sn, eq;
      for (const auto& r : results)
        if (r.ok && r.cell.k == k && r.cell.drop_path == dp) {
          acc.push_back(r.test_acc);
          ws.push_back(r.within_seq_fraction);
          bc.push_back(r.between_class_fraction);
          cs.push_back(r.last_cossim);
          sn.push_back(r.last_snr);
          eq.push_back(r.equiangularity);
        }
      if (acc.empty()) continue;
      SummaryRow row;
      row.k = k;
      row.drop_path = dp;
      row.runs = acc.size();
      std::tie(row.acc_mean, row.acc_std) = mean_std(acc);
      row.within_seq_fraction = mean_std(ws).first;
      row.between_class_fraction = mean_std(bc).first;
      row.last_cossim = mean_std(cs).first;
      row.last_snr = mean_std(sn).first;
      row.equiangularity = mean_std(eq).first;
      rows.push_back(row);
    }
  return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string s =
      "k,drop_path,runs,test_acc_mean,test_acc_std,within_seq_fraction,between_class_fraction,last_cossim,last_snr,"
      "equiangularity\n";
  for (const auto& r : rows)
    s += std::to_string(r.k) + "," + fmt_real(r.drop_path) + "," + std::to_string(r.runs) + "," + fmt_real(r.acc_mean) +
         "," + fmt_real(r.acc_std) + "," + fmt_real(r.within_seq_fraction) + "," + fmt_real(r.between_class_fraction) +
         "," + fmt_real(r.last_cossim) + "," + fmt_real(r.last_snr) + "," + fmt_real(r.equiangularity) + "\n";
  return s;
}

struct ExperimentOutcome {
  std::vector<CellResult> results;
  std::vector<SummaryRow> summary;
  std::size_t failures = 0;
};

/// Every (k, drop_path, seed) cell in its own subdirectory, then summary.csv.
/// Cells run on up to cfg.workers threads; results do not depend on the count.
template <class S>
ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path root(cfg.output.dir);
  fs::create_directories(root);
  const DatasetSplit<S> data = load_data<S>(cfg);
  const std::vector<Cell> cells = sweep_cells(cfg);
  ExperimentOutcome out;
  out.results.resize(cells.size());
  const std::size_t workers = deterministic_env() ? 1 : std::min(cfg.workers, cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) out.results[i] = run_cell<S>(cfg, cells[i], data, root);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  std::string failures = "k,drop_path,seed,error\n";
  for (const auto& r : out.results)
    if (!r.ok) {
      ++out.failures;
      failures += std::to_string(r.cell.k) + "," + fmt_real(r.cell.drop_path) + "," + std::to_string(r.cell.seed) +
                  ",\"" + r.error + "\"\n";
    }
  out.summary = summarize(cfg, out.results);
  write_text(root / "summary.csv", summary_csv(out.summary));
  if (out.failures > 0) write_text(root / "failures.csv", failures);
  return out;
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  return cfg.precision == "float32" ? run_experiment<float>(cfg) : run_experiment<double>(cfg);
}

namespace detail {
inline void compare_json(const nlohmann::ordered_json& a, const nlohmann::ordered_json& b, const std::string& path,
                         double tol, double& worst, std::vector<std::string>& problems) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    const double diff = std::abs(x - y);
    worst = std::max(worst, diff);
    if (!(diff <= tol)) problems.push_back(path + ": stored " + fmt_real(x) + ", recomputed " + fmt_real(y));
  } else if (a.is_array() && b.is_array() && a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i)
      compare_json(a[i], b[i], path + "[" + std::to_string(i) + "]", tol, worst, problems);
  } else if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) {
        problems.push_back(path + "." + it.key() + ": missing from recomputation");
        continue;
      }
      compare_json(it.value(), b.at(it.key()), path + "." + it.key(), tol, worst, problems);
    }
  } else if (a != b) {
    problems.push_back(path + ": values differ");
  }
}
}  // namespace detail

struct VerifyResult {
  double max_deviation = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Recompute the geometry report of a run from its config, checkpoint and
/// dataset, and compare with the stored report.json.
template <class S>
VerifyResult verify_run(const fs::path& run_dir, double tol = 1e-9) {
  const ExperimentConfig cc = load_config((run_dir / "config.json").string());
  const DatasetSplit<S> data = load_data<S>(cc);
  const ModelParams<S> params = load_checkpoint<S>((run_dir / "checkpoint.lpfm").string(), cc.model);
  const auto fresh = report_to_json(analyze_split(cc, params, data));
  const auto stored = parse_json_text(read_text(run_dir / "report.json"), (run_dir / "report.json").string());
  VerifyResult v;
  detail::compare_json(stored, fresh, "report", tol, v.max_deviation, v.problems);
  return v;
}

inline VerifyResult verify_run(const fs::path& run_dir, double tol = 1e-9) {
  const ExperimentConfig cc = load_config((run_dir / "config.json").string());
  return cc.precision == "float32" ? verify_run<float>(run_dir, tol) : verify_run<double>(run_dir, tol);
}

}  // namespace lpfm
