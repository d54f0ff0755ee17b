#pragma once

// End-to-end runs built from a RunConfig: dataset assembly (from disk or
// synthesized in memory), training, evaluation and the four-case ablation.

#include <array>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "derain/config.hpp"
#include "derain/io.hpp"
#include "derain/model.hpp"
#include "derain/rain.hpp"

namespace derain {

inline std::string pair_name(int i) {
  std::ostringstream os;
  os << "pair_" << std::setw(3) << std::setfill('0') << i << ".png";
  return os.str();
}

/// Scene seeds: training pairs start at seed*1000, held-out pairs 500 later.
inline std::vector<rain::PairedSample> synth_dataset(const RunConfig& c, bool held_out) {
  const int n = held_out ? c.synth.test_pairs : c.synth.pairs;
  const std::uint64_t base = c.seed * 1000 + (held_out ? 500 : 0);
  std::vector<rain::PairedSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(rain::synth_pair(c.synth.width, c.synth.height, c.streaks, base + i, pair_name(i)));
  return out;
}

inline std::vector<rain::PairedSample> train_set(const RunConfig& c) {
  if (c.data.train_rainy.empty()) return synth_dataset(c, false);
  return rain::load_pairs(c.data.train_rainy, c.data.train_clean, {c.data.strip_numeric_suffix});
}

inline std::vector<rain::PairedSample> test_set(const RunConfig& c) {
  if (c.data.test_rainy.empty()) return synth_dataset(c, true);
  return rain::load_pairs(c.data.test_rainy, c.data.test_clean, {c.data.strip_numeric_suffix});
}

/// Writes rainy/ and clean/ subdirectories of `dir` with pair_NNN.png files.
inline void write_dataset(const std::vector<rain::PairedSample>& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "rainy");
  std::filesystem::create_directories(dir / "clean");
  for (const auto& s : set) {
    io::write_png(dir / "rainy" / s.name, s.rainy);
    io::write_png(dir / "clean" / s.name, s.clean);
  }
}

struct AblationCase {
  const char* label;
  bool iwgif, feature_net, derb;
};

/// Same layout as the component study: case4 is the full pipeline.
inline constexpr std::array<AblationCase, 4> kAblationCases{{
    {"case1", false, true, true},
    {"case2", true, false, true},
    {"case3", true, true, false},
    {"case4", true, true, true},
}};

struct AblationRow {
  AblationCase which;
  double mean_ssim = 0.0;
  double mean_psnr_db = 0.0;
  double final_loss = 0.0;
};

inline PipelineConfig with_case(PipelineConfig p, const AblationCase& k) {
  p.use_iwgif = k.iwgif;
  p.use_feature_net = k.feature_net;
  p.use_derb = k.derb;
  return p;
}

/// Trains and evaluates every case from one config; only the flags differ.
inline std::vector<AblationRow> run_ablation(const RunConfig& c, const std::vector<rain::PairedSample>& train_data,
                                             const std::vector<rain::PairedSample>& test_data,
                                             const std::function<void(const std::string&)>& log = {}) {
  std::vector<AblationRow> rows;
  for (const auto& k : kAblationCases) {
    const PipelineConfig p = with_case(c.pipeline, k);
    DerainModel<float> model;
    const auto tr = train(model, train_data, p);
    const auto rep = evaluate(test_data, model, p);
    rows.push_back({k, rep.mean_ssim, rep.mean_psnr_db, tr.trace.empty() ? 0.0 : tr.trace.back().loss});
    if (log) log(std::string(k.label) + ": psnr " + metrics::format_metric(rep.mean_psnr_db) + " dB, ssim " +
                 metrics::format_metric(rep.mean_ssim));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  auto yn = [](bool b) { return b ? "Y" : "N"; };
  std::ostringstream os;
  os << "case,iwgif,feature_extract_net,derb,ssim,psnr_db\n";
  for (const auto& r : rows)
    os << r.which.label << ',' << yn(r.which.iwgif) << ',' << yn(r.which.feature_net) << ',' << yn(r.which.derb)
       << ',' << metrics::format_metric(r.mean_ssim) << ',' << metrics::format_metric(r.mean_psnr_db) << '\n';
  return os.str();
}

}  // namespace derain
