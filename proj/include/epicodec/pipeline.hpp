#pragma once

#include <filesystem>

#include "epicodec/bd.hpp"
#include "epicodec/config.hpp"
#include "epicodec/metrics.hpp"

namespace epicodec {

// Stage layout under one output directory:
//   data/        frames + manifest.json          (synth-data)
//   epi/         epi_w%04d.epiv + index.json     (build-epi)
//   train/       checkpoint.epck, metrics.csv, summary.json
//   bitstreams/  si_w%04d_j%03d.epic + manifest.json
//   decoded/     reconstructed frames + manifest.json
//   rd_curve.csv, evaluate_report.json           (evaluate)
struct StagePaths {
  std::filesystem::path out;
  std::filesystem::path data() const { return out / "data"; }
  std::filesystem::path epi_dir() const { return out / "epi"; }
  std::filesystem::path train_dir() const { return out / "train"; }
  std::filesystem::path bitstream_dir() const { return out / "bitstreams"; }
  std::filesystem::path decoded_dir() const { return out / "decoded"; }
};

void run_synth_data(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_build_epi(const ExperimentConfig& cfg, const std::filesystem::path& out);
TrainSummary run_train(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_encode(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_decode(const ExperimentConfig& cfg, const std::filesystem::path& out);
RDCurve run_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
BDResult run_bdstats(const std::filesystem::path& curve_a, const std::filesystem::path& curve_b,
                     const std::filesystem::path& out);

// run every stage that has not produced its outputs yet
void run_chain(const ExperimentConfig& cfg, const std::filesystem::path& out);

MultiViewFrameSet source_frames(const ExperimentConfig& cfg, const StagePaths& sp);

}  // namespace epicodec
