#pragma once

// Deraining network: iWGIF detail extraction feeds a rain-streak estimator;
// the rainy image and the estimated streaks are lifted into a feature space
// where the streak features are subtracted, and a reconstruction branch maps
// the latent features back to an image.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/filter.hpp"
#include "derain/image.hpp"
#include "derain/metrics.hpp"
#include "derain/nn/checkpoint.hpp"
#include "derain/nn/layers.hpp"
#include "derain/nn/optim.hpp"
#include "derain/rain.hpp"
#include "derain/rng.hpp"

namespace derain {

struct TrainConfig {
  int batch = 8;
  int crop = 128;
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  long total_steps = 1000;
  std::uint64_t seed = 1;
};

struct PipelineConfig {
  int feature_channels = 32;
  int reduction = 4;
  bool use_iwgif = true;
  bool use_feature_net = true;
  bool use_derb = true;
  bool tie_feature_nets = false;  // one feature extractor for both inputs
  filter::FilterParams filter_params;
  TrainConfig train;

  void validate() const {
    if (feature_channels < 3) throw std::invalid_argument("feature_channels must be >= 3");
    if (reduction < 1 || feature_channels % reduction != 0)
      throw std::invalid_argument("reduction must divide feature_channels");
    filter_params.validate();
    if (train.batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (train.crop < 16) throw std::invalid_argument("crop must be >= 16");
    if (!(train.lr_min > 0.0) || !(train.lr_max > train.lr_min))
      throw std::invalid_argument("need lr_max > lr_min > 0");
    if (train.total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  }
};

template <class T>
struct FeatureNet {
  nn::ResidualGroup<T> rrg1, rrg2;
  nn::Conv2d<T> conv;

  FeatureNet() = default;
  FeatureNet(int c, int r) : rrg1(c, r), rrg2(c, r), conv(c, c, 3) {}

  nn::Tensor<T> operator()(const nn::Tensor<T>& x) const { return conv(rrg2(rrg1(x))); }
  void init(Rng& rng) {
    rrg1.init(rng);
    rrg2.init(rng);
    conv.init(rng);
  }
  void collect(nn::ParamList<T>& ps, const std::string& p) const {
    rrg1.collect(ps, p + ".rrg1");
    rrg2.collect(ps, p + ".rrg2");
    conv.collect(ps, p + ".conv");
  }
};

template <class T>
struct StreakNet {
  nn::Conv2d<T> conv_in;
  nn::ResidualGroup<T> rrg1, rrg2;
  nn::Conv2d<T> conv_out;

  StreakNet() = default;
  StreakNet(int c, int r) : conv_in(3, c, 3), rrg1(c, r), rrg2(c, r), conv_out(c, 3, 3) {}

  nn::Tensor<T> operator()(const nn::Tensor<T>& x) const { return conv_out(rrg2(rrg1(conv_in(x)))); }
  void init(Rng& rng) {
    conv_in.init(rng);
    rrg1.init(rng);
    rrg2.init(rng);
    conv_out.init(rng);
  }
  void collect(nn::ParamList<T>& ps, const std::string& p) const {
    conv_in.collect(ps, p + ".conv_in");
    rrg1.collect(ps, p + ".rrg1");
    rrg2.collect(ps, p + ".rrg2");
    conv_out.collect(ps, p + ".conv_out");
  }
};

/// Four residual groups and a conv: rebuilds features from the latent.
template <class T>
struct EnhanceBranch {
  std::array<nn::ResidualGroup<T>, 4> groups;
  nn::Conv2d<T> conv;

  EnhanceBranch() = default;
  EnhanceBranch(int c, int r) : conv(c, c, 3) {
    for (auto& g : groups) g = nn::ResidualGroup<T>(c, r);
  }

  nn::Tensor<T> operator()(const nn::Tensor<T>& x) const {
    nn::Tensor<T> h = x;
    for (const auto& g : groups) h = g(h);
    return conv(h);
  }
  void init(Rng& rng) {
    for (auto& g : groups) g.init(rng);
    conv.init(rng);
  }
  void collect(nn::ParamList<T>& ps, const std::string& p) const {
    for (std::size_t i = 0; i < groups.size(); ++i) groups[i].collect(ps, p + ".rrg" + std::to_string(i + 1));
    conv.collect(ps, p + ".conv");
  }
};

template <class T>
struct ForwardResult {
  nn::Tensor<T> streaks;   // S_hat, 3 channels
  nn::Tensor<T> restored;  // before clamping
};

template <class T>
class DerainModel {
 public:
  DerainModel() = default;
  DerainModel(int feature_channels, int reduction, bool tie_feature_nets = false)
      : channels_(feature_channels),
        reduction_(reduction),
        tied_(tie_feature_nets),
        head(3, feature_channels, 3),
        tail(feature_channels, 3, 3),
        streak_net(feature_channels, reduction),
        feature_net_I(feature_channels, reduction),
        feature_net_S(feature_channels, reduction),
        derb(feature_channels, reduction) {}

  explicit DerainModel(const PipelineConfig& cfg)
      : DerainModel(cfg.feature_channels, cfg.reduction, cfg.tie_feature_nets) {}

  int feature_channels() const { return channels_; }
  int reduction() const { return reduction_; }
  bool tied() const { return tied_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    head.init(rng);
    tail.init(rng);
    streak_net.init(rng);
    feature_net_I.init(rng);
    feature_net_S.init(rng);
    derb.init(rng);
  }

  nn::ParamList<T> params() const {
    nn::ParamList<T> ps;
    head.collect(ps, "head");
    tail.collect(ps, "tail");
    streak_net.collect(ps, "streak_net");
    feature_net_I.collect(ps, "feature_net_I");
    if (!tied_) feature_net_S.collect(ps, "feature_net_S");
    derb.collect(ps, "derb");
    return ps;
  }

  /// `rainy` is the image batch; `streak_source` is what the streak
  /// estimator sees (the iWGIF detail layer, or the rainy image itself).
  ForwardResult<T> forward(const nn::Tensor<T>& rainy, const nn::Tensor<T>& streak_source,
                           const PipelineConfig& cfg) const {
    ForwardResult<T> r;
    r.streaks = streak_net(streak_source);
    nn::Tensor<T> latent;
    if (cfg.use_feature_net) {
      const auto f_rainy = feature_net_I(head(rainy));
      const auto& fs_net = tied_ ? feature_net_I : feature_net_S;
      latent = nn::sub(f_rainy, fs_net(head(r.streaks)));
    } else {
      latent = head(nn::sub(rainy, r.streaks));
    }
    r.restored = tail(cfg.use_derb ? derb(latent) : latent);
    return r;
  }

  nn::Conv2d<T> head, tail;
  StreakNet<T> streak_net;
  FeatureNet<T> feature_net_I, feature_net_S;
  EnhanceBranch<T> derb;

 private:
  int channels_ = 0;
  int reduction_ = 1;
  bool tied_ = false;
};

// ---------------------------------------------------------------------------
// Image <-> tensor plumbing

template <class T>
nn::Tensor<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("empty batch");
  const int W = images[0].width(), H = images[0].height();
  nn::Shape s{static_cast<int>(images.size()), 3, H, W};
  std::vector<T> v(s.size());
  std::size_t k = 0;
  for (const auto& img0 : images) {
    if (img0.width() != W || img0.height() != H) throw std::invalid_argument("batch images differ in size");
    const Image img = to_rgb(img0);
    for (double d : img.data()) v[k++] = static_cast<T>(d);
  }
  return nn::Tensor<T>::from(s, std::move(v));
}

template <class T>
nn::Tensor<T> to_tensor(const Image& img) {
  return to_tensor<T>(std::span<const Image>(&img, 1));
}

template <class T>
Image to_image(const nn::Tensor<T>& t, int index = 0) {
  const auto s = t.shape();
  Image img(s.w, s.h, s.c);
  const std::size_t off = static_cast<std::size_t>(index) * s.c * s.plane();
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(t.data()[off + i]);
  return img;
}

/// Input to the streak estimator: the iWGIF detail layer, or the image itself
/// when the filter stage is ablated.
inline Image streak_source(const Image& rainy, const PipelineConfig& cfg) {
  const Image rgb = to_rgb(rainy);
  if (!cfg.use_iwgif) return rgb;
  return filter::decompose(rgb, cfg.filter_params).detail;
}

template <class T>
Image extract_streaks(const Image& rainy, const DerainModel<T>& model, const PipelineConfig& cfg) {
  require_non_empty(rainy);
  return to_image(model.streak_net(to_tensor<T>(streak_source(rainy, cfg))));
}

template <class T>
Image derain_image(const Image& rainy, const DerainModel<T>& model, const PipelineConfig& cfg) {
  require_non_empty(rainy);
  const auto fwd = model.forward(to_tensor<T>(rainy), to_tensor<T>(streak_source(rainy, cfg)), cfg);
  return to_image(fwd.restored).clamped();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::string& meta(const nn::Checkpoint& ck, const std::string& key) {
  const auto it = ck.meta.find(key);
  if (it == ck.meta.end()) throw nn::CheckpointError("checkpoint missing key " + key);
  return it->second;
}

template <class T>
nn::NamedArray to_array(const nn::Tensor<T>& t) {
  const auto s = t.shape();
  nn::NamedArray a;
  a.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  a.data.reserve(t.size());
  for (T v : t.data()) a.data.push_back(static_cast<float>(v));
  return a;
}

}  // namespace detail

template <class T>
nn::Checkpoint make_checkpoint(const DerainModel<T>& model, const PipelineConfig& cfg,
                               const nn::OptimizerState* opt = nullptr) {
  nn::Checkpoint ck;
  auto& m = ck.meta;
  m["arch.feature_channels"] = std::to_string(model.feature_channels());
  m["arch.reduction"] = std::to_string(model.reduction());
  m["arch.tie_feature_nets"] = model.tied() ? "1" : "0";
  m["pipeline.use_iwgif"] = cfg.use_iwgif ? "1" : "0";
  m["pipeline.use_feature_net"] = cfg.use_feature_net ? "1" : "0";
  m["pipeline.use_derb"] = cfg.use_derb ? "1" : "0";
  m["filter.zeta"] = std::to_string(cfg.filter_params.zeta);
  m["filter.lambda"] = detail::fmt(cfg.filter_params.lambda);
  m["filter.epsilon"] = detail::fmt(cfg.filter_params.epsilon);
  m["filter.eta"] = detail::fmt(cfg.filter_params.eta);
  const auto ps = model.params();
  for (const auto& [name, t] : ps) ck.arrays.emplace_back(name, detail::to_array(t));
  if (opt) {
    m["optimizer.step"] = std::to_string(opt->step);
    m["optimizer.lr"] = detail::fmt(opt->lr);
    m["optimizer.beta1"] = detail::fmt(opt->beta1);
    m["optimizer.beta2"] = detail::fmt(opt->beta2);
    for (std::size_t i = 0; i < opt->m.size() && i < ps.size(); ++i) {
      nn::NamedArray am = detail::to_array(ps[i].second), av = am;
      for (std::size_t j = 0; j < am.data.size(); ++j) {
        am.data[j] = static_cast<float>(opt->m[i][j]);
        av.data[j] = static_cast<float>(opt->v[i][j]);
      }
      ck.arrays.emplace_back("adam.m." + ps[i].first, std::move(am));
      ck.arrays.emplace_back("adam.v." + ps[i].first, std::move(av));
    }
  }
  return ck;
}

template <class T>
struct LoadedModel {
  DerainModel<T> model;
  PipelineConfig config;
  nn::OptimizerState optimizer;
};

/// Rebuilds a model from a checkpoint. Every parameter must be present with
/// the shape the stored architecture implies.
template <class T>
LoadedModel<T> load_model(const nn::Checkpoint& ck) {
  LoadedModel<T> out;
  auto& cfg = out.config;
  try {
    cfg.feature_channels = std::stoi(detail::meta(ck, "arch.feature_channels"));
    cfg.reduction = std::stoi(detail::meta(ck, "arch.reduction"));
    cfg.tie_feature_nets = detail::meta(ck, "arch.tie_feature_nets") == "1";
    cfg.use_iwgif = detail::meta(ck, "pipeline.use_iwgif") == "1";
    cfg.use_feature_net = detail::meta(ck, "pipeline.use_feature_net") == "1";
    cfg.use_derb = detail::meta(ck, "pipeline.use_derb") == "1";
    cfg.filter_params.zeta = std::stoi(detail::meta(ck, "filter.zeta"));
    cfg.filter_params.lambda = std::stod(detail::meta(ck, "filter.lambda"));
    cfg.filter_params.epsilon = std::stod(detail::meta(ck, "filter.epsilon"));
    cfg.filter_params.eta = std::stod(detail::meta(ck, "filter.eta"));
  } catch (const std::logic_error& e) {
    throw nn::CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
  }
  cfg.validate();
  out.model = DerainModel<T>(cfg);
  const auto ps = out.model.params();
  for (const auto& [name, t0] : ps) {
    nn::Tensor<T> t = t0;
    const auto* a = ck.find(name);
    if (!a) throw nn::CheckpointError("checkpoint/architecture mismatch: missing " + name);
    const auto expect = detail::to_array(t).dims;
    if (a->dims != expect) throw nn::CheckpointError("checkpoint/architecture mismatch: shape of " + name);
    for (std::size_t i = 0; i < a->data.size(); ++i) t.data()[i] = static_cast<T>(a->data[i]);
  }
  if (ck.meta.count("optimizer.step")) {
    auto& opt = out.optimizer;
    opt.step = std::stol(detail::meta(ck, "optimizer.step"));
    opt.lr = std::stod(detail::meta(ck, "optimizer.lr"));
    opt.beta1 = std::stod(detail::meta(ck, "optimizer.beta1"));
    opt.beta2 = std::stod(detail::meta(ck, "optimizer.beta2"));
    for (const auto& [name, t] : ps) {
      const auto* am = ck.find("adam.m." + name);
      const auto* av = ck.find("adam.v." + name);
      if (!am || !av) {
        opt.m.clear();
        opt.v.clear();
        break;
      }
      opt.m.emplace_back(am->data.begin(), am->data.end());
      opt.v.emplace_back(av->data.begin(), av->data.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training and evaluation

struct LossRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> trace;
  nn::OptimizerState optimizer;
};

inline std::string loss_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "step,lr,loss\n";
  for (const auto& r : trace) os << r.step << ',' << r.lr << ',' << r.loss << '\n';
  return os.str();
}

/// Seeded training loop: crops a batch, runs the pipeline, takes an L1 step
/// with cosine-annealed Adam. The model is initialized from cfg.train.seed.
template <class T>
TrainResult train(DerainModel<T>& model, const std::vector<rain::PairedSample>& dataset,
                  const PipelineConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step = {}) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  const int crop = cfg.train.crop;
  for (const auto& s : dataset) {
    if (!s.rainy.same_extent(s.clean)) throw std::invalid_argument("rainy/clean size mismatch in " + s.name);
    if (s.rainy.width() < crop || s.rainy.height() < crop)
      throw std::invalid_argument("crop larger than image " + s.name);
  }

  model = DerainModel<T>(cfg);
  model.init(cfg.train.seed);
  const auto params = model.params();

  // Streak-estimator inputs are computed once on the full images and cropped
  // alongside them.
  std::vector<Image> rainy, clean, source;
  for (const auto& s : dataset) {
    rainy.push_back(to_rgb(s.rainy));
    clean.push_back(to_rgb(s.clean));
    source.push_back(streak_source(s.rainy, cfg));
  }

  TrainResult result;
  result.optimizer.lr = cfg.train.lr_max;
  Rng rng(cfg.train.seed ^ 0xD1B54A32D192ED03ULL);
  for (long step = 0; step < cfg.train.total_steps; ++step) {
    std::vector<Image> bi, bs, bt;
    for (int b = 0; b < cfg.train.batch; ++b) {
      const auto k = uniform_index(rng, dataset.size());
      const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rainy[k].width() - crop + 1)));
      const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rainy[k].height() - crop + 1)));
      bi.push_back(rainy[k].crop(x0, y0, crop, crop));
      bs.push_back(source[k].crop(x0, y0, crop, crop));
      bt.push_back(clean[k].crop(x0, y0, crop, crop));
    }
    const auto fwd = model.forward(to_tensor<T>(bi), to_tensor<T>(bs), cfg);
    auto loss = nn::l1_loss(fwd.restored, to_tensor<T>(bt));
    nn::zero_grads(params);
    loss.backward();
    const double lr = nn::cosine_lr(step, cfg.train.total_steps, cfg.train.lr_max, cfg.train.lr_min);
    result.optimizer.lr = lr;
    nn::adam_step(params, result.optimizer);
    result.trace.push_back({step, lr, static_cast<double>(loss.item())});
    if (on_step) on_step(result.trace.back());
  }
  return result;
}

/// Per-image PSNR/SSIM of the restored full-size images against ground truth.
template <class T>
metrics::MetricReport evaluate(const std::vector<rain::PairedSample>& dataset,
                               const DerainModel<T>& model, const PipelineConfig& cfg) {
  metrics::MetricReport report;
  for (const auto& s : dataset) {
    const Image restored = derain_image(s.rainy, model, cfg);
    const Image truth = to_rgb(s.clean);
    report.add({s.name, metrics::psnr(restored, truth), metrics::ssim(restored, truth)});
  }
  return report;
}

/// Metrics of the untouched rainy inputs, the baseline a restoration must beat.
inline metrics::MetricReport evaluate_identity(const std::vector<rain::PairedSample>& dataset) {
  metrics::MetricReport report;
  for (const auto& s : dataset)
    report.add({s.name, metrics::psnr(s.rainy, s.clean), metrics::ssim(s.rainy, s.clean)});
  return report;
}

}  // namespace derain
