// bdcca: two-modality correlated-representation pipeline for sparse sound
// event detection. Subcommands mirror the pipeline stages; `run` chains them
// end to end over a synthetic or ingested dataset.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "bdcca/cca.hpp"
#include "bdcca/pipeline.hpp"

using namespace bdcca;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string mode;
  std::string out;
  std::int64_t seed = -1;
};

PipelineConfig make_config(const GlobalArgs& args) {
  PipelineConfig cfg =
      args.config_path.empty() ? PipelineConfig{} : load_config(args.config_path);
  if (!args.mode.empty() && args.mode != "all") cfg.mode = parse_mode(args.mode);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.out.empty()) cfg.out_dir = args.out;
  cfg.validate();
  return cfg;
}

std::vector<Mode> modes_to_run(const GlobalArgs& args, const PipelineConfig& cfg) {
  if (args.mode == "all")
    return {Mode::Dcrnn, Mode::DcrnnAccel, Mode::Dcca, Mode::Bdcca};
  return {cfg.mode};
}

Eigen::MatrixXd read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cca-diag: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        row.push_back(std::stod(line.substr(start, i - start)));
        start = i + 1;
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw io_error(cat("cca-diag: ragged row in ", path));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw io_error("cca-diag: empty matrix in " + path);
  // File rows are samples; views are dimensions x samples.
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.front().size()),
                    static_cast<Eigen::Index>(rows.size()));
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (std::size_t d = 0; d < rows[s].size(); ++d)
      m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(s)) = rows[s][d];
  return m;
}

void print_metrics_row(const RunResult& r) {
  std::printf("%-12s P=%.4f R=%.4f F1=%.4f (tp=%lld fp=%lld fn=%lld)\n",
              mode_name(r.mode), r.metrics.precision, r.metrics.recall,
              r.metrics.f1, static_cast<long long>(r.metrics.tp),
              static_cast<long long>(r.metrics.fp),
              static_cast<long long>(r.metrics.fn));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"balanced two-view correlation learning for sparse event detection"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "JSON config file");
  app.add_option("--seed", args.seed, "override run.seed");
  app.add_option("--mode", args.mode,
                 "override run.mode (dcrnn|dcrnn-accel|dcca|bdcca|all)");
  app.add_option("--out", args.out, "override run.out");

  auto* synth = app.add_subcommand(
      "synth", "generate the synthetic dataset and export it as WAV + manifest");
  auto* ingest_cmd = app.add_subcommand(
      "ingest", "read a manifest dataset and print its shape");
  auto* train_bootstrap =
      app.add_subcommand("train-bootstrap", "train the bootstrap classifier");
  auto* build_index_cmd = app.add_subcommand(
      "build-index", "pseudo-label unlabeled clips and bin them by occupancy");
  auto* train_dcca_cmd =
      app.add_subcommand("train-dcca", "train the two-view encoders");
  auto* embed = app.add_subcommand(
      "embed", "encode labeled mic clips with the trained mic encoder");
  auto* train_detector =
      app.add_subcommand("train-detector", "train the downstream detector");
  auto* evaluate = app.add_subcommand(
      "evaluate", "run detector evaluation and write the report");
  auto* run = app.add_subcommand("run", "end-to-end pipeline for the mode(s)");
  auto* cca_diag = app.add_subcommand(
      "cca-diag", "canonical correlations of two CSV matrices (rows = samples)");

  std::string csv_x1, csv_x2;
  int diag_k = 0;
  double diag_r1 = 1e-4;
  cca_diag->add_option("x1", csv_x1, "first view CSV")->required();
  cca_diag->add_option("x2", csv_x2, "second view CSV")->required();
  cca_diag->add_option("--k", diag_k, "components (default: min dimension)");
  cca_diag->add_option("--r1", diag_r1, "covariance regularizer");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cca_diag->parsed()) {
      const Eigen::MatrixXd x1 = read_csv_matrix(csv_x1);
      const Eigen::MatrixXd x2 = read_csv_matrix(csv_x2);
      const Eigen::Index k =
          diag_k > 0 ? diag_k : std::min(x1.rows(), x2.rows());
      const CcaSolution sol = cca_fit(x1, x2, k, diag_r1);
      std::printf("total correlation: %.6f\n", total_correlation(x1, x2, diag_r1));
      for (std::size_t i = 0; i < sol.correlations.size(); ++i)
        std::printf("rho_%zu = %.6f\n", i + 1, sol.correlations[i]);
      return 0;
    }

    PipelineConfig cfg = make_config(args);

    if (synth->parsed()) {
      SynthConfig s = cfg.synth;
      s.seed = derive_seed(cfg.seed, "dataset");
      export_synth_dataset(s, cfg.out_dir);
      std::printf("wrote %d clips (%d labeled) to %s\n", s.n_clips, s.n_labeled,
                  cfg.out_dir.c_str());
      return 0;
    }
    if (ingest_cmd->parsed()) {
      const DatasetSplit split =
          ingest(cfg.data_root,
                 parse_manifest(cfg.data_root.empty()
                                    ? cfg.manifest_path
                                    : (std::filesystem::path(cfg.data_root) /
                                       cfg.manifest_path)
                                          .string()),
                 cfg.stft);
      std::printf("labeled: %zu clips, unlabeled: %zu clips\n",
                  split.labeled.size(), split.unlabeled.size());
      if (!split.labeled.empty())
        std::printf("spectrogram shape: (%lld, %lld)\n",
                    static_cast<long long>(split.labeled[0].mic.freq_bins()),
                    static_cast<long long>(split.labeled[0].mic.frames()));
      return 0;
    }

    Pipeline pipeline(cfg);

    if (run->parsed() || evaluate->parsed()) {
      std::vector<RunResult> results;
      for (Mode m : modes_to_run(args, cfg)) {
        RunResult r = pipeline.run_mode(m);
        print_metrics_row(r);
        results.push_back(std::move(r));
      }
      pipeline.write_report(results);
      std::printf("report written to %s\n", cfg.out_dir.c_str());
      return 0;
    }

    // Stage subcommands warm the content-addressed cache; a later `run`
    // with the same config reuses them.
    if (train_bootstrap->parsed() || build_index_cmd->parsed() ||
        train_dcca_cmd->parsed() || embed->parsed() || train_detector->parsed()) {
      const Mode m = cfg.mode;
      if (train_bootstrap->parsed() || build_index_cmd->parsed()) {
        if (m != Mode::Bdcca)
          throw config_error("bootstrap/index stages exist in bdcca mode only");
      }
      RunResult r = pipeline.run_mode(m);  // all stages are cache-backed
      std::string wanted =
          train_bootstrap->parsed()   ? "bootstrap"
          : build_index_cmd->parsed() ? "build-index"
          : train_dcca_cmd->parsed()  ? cat("train-dcca-", mode_name(m))
          : embed->parsed()           ? "embed"
                                      : cat("detector-", mode_name(m));
      for (const auto& s : r.stages)
        if (s.name == wanted)
          std::printf("%s: key=%s cached=%d (%.2fs)\n", s.name.c_str(),
                      s.cache_key.c_str(), s.cached ? 1 : 0, s.seconds);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
