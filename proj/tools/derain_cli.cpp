// Command-line front end: filter, synth, train, derain, eval, ablate.
//
// Exit codes: 0 success, 1 I/O failure (missing or unreadable files,
// unwritable outputs, bad checkpoints), 2 validation failure (bad flags,
// bad config, out-of-range values).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "derain/config.hpp"
#include "derain/filter.hpp"
#include "derain/io.hpp"
#include "derain/model.hpp"
#include "derain/nn/parallel.hpp"
#include "derain/pipeline.hpp"

namespace fs = std::filesystem;
using namespace derain;

namespace {

enum Exit { kOk = 0, kIo = 1, kInvalid = 2 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw io::IoError("no such file: " + p.string());
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw io::IoError("not a directory: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw io::IoError("cannot write " + p.string());
  f << text;
  if (!f) throw io::IoError("cannot write " + p.string());
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::IoError("cannot create output directory " + dir.string());
}

RunConfig resolve(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.apply_seed(*g.seed);
  if (g.deterministic) c.deterministic = true;
  if (!g.out.empty()) c.output.dir = g.out;
  c.validate();
  if (c.deterministic) nn::set_num_threads(1);
  return c;
}

void check_data_dirs(const RunConfig& c, bool need_train, bool need_test) {
  if (need_train && !c.data.train_rainy.empty()) {
    require_dir(c.data.train_rainy);
    require_dir(c.data.train_clean);
  }
  if (need_test && !c.data.test_rainy.empty()) {
    require_dir(c.data.test_rainy);
    require_dir(c.data.test_clean);
  }
}

Image visualize_detail(const Image& d) {
  Image v = d;
  for (double& x : v.data()) x = 0.5 + 0.5 * x;
  return v.clamped();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-image rain streak removal: guided-filter detail extraction plus a small attention network."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration (unknown keys are rejected)");
  app.add_option("--seed", g.seed, "Master seed for synthesis and training");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--out", g.out, "Output directory (default: config output.dir, else ./out)");
  app.fallthrough();

  // filter
  auto* filter_cmd = app.add_subcommand(
      "filter",
      "Smooth an image with gif, wgif or iwgif. With --detail, also writes the signed detail layer "
      "(input minus unclamped self-guided output) mapped to [0,1] as 0.5 + detail/2.");
  std::string f_input, f_guidance, f_algo = "iwgif", f_name = "filtered.png";
  bool f_detail = false;
  std::optional<int> f_zeta;
  std::optional<double> f_lambda, f_eps, f_eta;
  filter_cmd->add_option("--input", f_input, "Input image (PNG or binary PPM/PGM)")->required();
  filter_cmd->add_option("--guidance", f_guidance, "Guidance image (default: the input)");
  filter_cmd->add_option("--algo", f_algo, "gif | wgif | iwgif")->check(CLI::IsMember({"gif", "wgif", "iwgif"}));
  filter_cmd->add_option("--zeta", f_zeta, "Window radius");
  filter_cmd->add_option("--lambda", f_lambda, "Regularization");
  filter_cmd->add_option("--epsilon", f_eps, "Edge-aware weight constant");
  filter_cmd->add_option("--eta", f_eta, "Aggregation weight scale");
  filter_cmd->add_option("--name", f_name, "Output file name inside --out");
  filter_cmd->add_flag("--detail", f_detail, "Also write detail.png (0.5 + detail/2)");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write paired rainy/ and clean/ directories of synthetic images");
  bool s_held_out = false;
  synth_cmd->add_flag("--held-out", s_held_out, "Write the held-out evaluation set instead of the training set");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the network; writes a checkpoint and a step,lr,loss CSV");
  std::string t_rainy, t_clean;
  train_cmd->add_option("--rainy", t_rainy, "Directory of rainy training images");
  train_cmd->add_option("--clean", t_clean, "Directory of matching clean images");

  // derain
  auto* derain_cmd = app.add_subcommand("derain", "Restore one rainy image with a trained checkpoint");
  std::string d_input, d_ckpt, d_name = "restored.png";
  derain_cmd->add_option("--input", d_input, "Rainy image")->required();
  derain_cmd->add_option("--checkpoint", d_ckpt, "Checkpoint written by train")->required();
  derain_cmd->add_option("--name", d_name, "Output file name inside --out");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Per-image PSNR/SSIM of restored images; writes name,psnr_db,ssim CSV");
  std::string e_ckpt, e_rainy, e_clean;
  eval_cmd->add_option("--checkpoint", e_ckpt, "Checkpoint written by train")->required();
  eval_cmd->add_option("--rainy", e_rainy, "Directory of rainy test images");
  eval_cmd->add_option("--clean", e_clean, "Directory of matching clean images");

  // ablate
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Train and evaluate the four component cases (no iwgif, no feature net, no enhance branch, full)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*filter_cmd) {
      RunConfig c = resolve(g);
      auto& fp = c.pipeline.filter_params;
      if (f_zeta) fp.zeta = *f_zeta;
      if (f_lambda) fp.lambda = *f_lambda;
      if (f_eps) fp.epsilon = *f_eps;
      if (f_eta) fp.eta = *f_eta;
      fp.validate();
      require_file(f_input);
      if (!f_guidance.empty()) require_file(f_guidance);
      const Image I = io::read_image(f_input);
      const Image G = f_guidance.empty() ? I : io::read_image(f_guidance);
      if (!I.same_shape(G)) throw std::invalid_argument("guidance/input shape mismatch");
      prepare_out(c.output.dir);
      Image out;
      if (f_algo == "gif") out = filter::gif(I, G, fp.zeta, fp.lambda);
      else if (f_algo == "wgif") out = filter::wgif(I, G, fp.zeta, fp.lambda, fp.epsilon);
      else out = filter::iwgif(I, G, fp);
      io::write_png(c.out(f_name), out);
      if (f_detail) io::write_png(c.out("detail.png"), visualize_detail(filter::decompose(I, fp).detail));
      std::cout << "wrote " << c.out(f_name).string() << '\n';
    } else if (*synth_cmd) {
      const RunConfig c = resolve(g);
      prepare_out(c.output.dir);
      const auto set = synth_dataset(c, s_held_out);
      write_dataset(set, c.output.dir);
      std::cout << "wrote " << set.size() << " pairs to " << c.output.dir.string() << '\n';
    } else if (*train_cmd) {
      RunConfig c = resolve(g);
      if (t_rainy.empty() != t_clean.empty()) throw std::invalid_argument("--rainy and --clean go together");
      if (!t_rainy.empty()) {
        c.data.train_rainy = t_rainy;
        c.data.train_clean = t_clean;
      }
      check_data_dirs(c, true, false);
      prepare_out(c.output.dir);
      const auto data = train_set(c);
      DerainModel<float> model;
      const long total = c.pipeline.train.total_steps;
      const auto res = train(model, data, c.pipeline, [&](const LossRecord& r) {
        if (r.step % 20 == 0 || r.step + 1 == total)
          std::cerr << "step " << r.step << " lr " << r.lr << " loss " << r.loss << '\n';
      });
      if (total == 0) model.init(c.pipeline.train.seed);
      nn::save_checkpoint(c.out(c.output.checkpoint), make_checkpoint(model, c.pipeline, &res.optimizer));
      write_text(c.out(c.output.loss_csv), loss_csv(res.trace));
      std::cout << "wrote " << c.out(c.output.checkpoint).string() << '\n';
    } else if (*derain_cmd) {
      const RunConfig c = resolve(g);
      require_file(d_input);
      require_file(d_ckpt);
      const auto loaded = load_model<float>(nn::load_checkpoint(d_ckpt));
      const Image rainy = io::read_image(d_input);
      prepare_out(c.output.dir);
      io::write_png(c.out(d_name), derain_image(rainy, loaded.model, loaded.config));
      std::cout << "wrote " << c.out(d_name).string() << '\n';
    } else if (*eval_cmd) {
      RunConfig c = resolve(g);
      if (e_rainy.empty() != e_clean.empty()) throw std::invalid_argument("--rainy and --clean go together");
      if (!e_rainy.empty()) {
        c.data.test_rainy = e_rainy;
        c.data.test_clean = e_clean;
      }
      check_data_dirs(c, false, true);
      require_file(e_ckpt);
      const auto loaded = load_model<float>(nn::load_checkpoint(e_ckpt));
      const auto data = test_set(c);
      prepare_out(c.output.dir);
      const auto report = evaluate(data, loaded.model, loaded.config);
      const auto baseline = evaluate_identity(data);
      write_text(c.out(c.output.metrics_csv), metrics::to_csv(report));
      std::cout << "restored: psnr " << metrics::format_metric(report.mean_psnr_db) << " dB, ssim "
                << metrics::format_metric(report.mean_ssim) << '\n'
                << "rainy:    psnr " << metrics::format_metric(baseline.mean_psnr_db) << " dB, ssim "
                << metrics::format_metric(baseline.mean_ssim) << '\n';
    } else if (*ablate_cmd) {
      const RunConfig c = resolve(g);
      check_data_dirs(c, true, true);
      prepare_out(c.output.dir);
      const auto rows = run_ablation(c, train_set(c), test_set(c), [](const std::string& s) { std::cerr << s << '\n'; });
      write_text(c.out(c.output.ablation_csv), ablation_csv(rows));
      std::cout << "wrote " << c.out(c.output.ablation_csv).string() << '\n';
    }
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const nn::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
