#include "lesionkit/xmasnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::xmasnet {

using augment::kSampleFloats;
using json = nlohmann::ordered_json;

NetworkConfig NetworkConfig::xmasnet() {
  NetworkConfig c;
  c.layers = {
      {"conv1", LayerKind::Conv, 3, 1, {32, 32, 32}},
      {"conv2", LayerKind::Conv, 3, 1, {32, 32, 32}},
      {"maxpool1", LayerKind::MaxPool, 2, 2, {16, 16, 32}},
      {"conv3", LayerKind::Conv, 3, 1, {16, 16, 64}},
      {"conv4", LayerKind::Conv, 3, 1, {16, 16, 64}},
      {"maxpool2", LayerKind::MaxPool, 2, 2, {8, 8, 64}},
      {"fc1", LayerKind::FullyConnected, 0, 0, {1, 1, 1024}},
      {"fc2", LayerKind::FullyConnected, 0, 0, {1, 1, 256}},
      {"softmax", LayerKind::Softmax, 0, 0, {1, 1, 2}},
  };
  return c;
}

std::vector<std::array<int, 4>> NetworkConfig::shape_chain(int n) const {
  std::vector<std::array<int, 4>> out;
  for (const auto& l : layers) out.push_back({n, l.output[2], l.output[0], l.output[1]});
  return out;
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

json config_json(const NetworkConfig& c) {
  json j;
  j["input"] = {c.input_size, c.input_size, c.input_channels};
  j["conv_block"] = "conv-batchnorm-relu";
  j["fc_activation"] = "relu";
  auto& layers = j["layers"] = json::array();
  for (const auto& l : c.layers) {
    layers.push_back({{"name", l.name},
                      {"type", kind_name(l.kind)},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"output", {l.output[0], l.output[1], l.output[2]}}});
  }
  return j;
}

constexpr int kConvOut[4] = {32, 32, 64, 64};
constexpr int kConvIn[4] = {3, 32, 32, 64};
constexpr int kFcOut[3] = {1024, 256, 2};
constexpr int kFcIn[3] = {4096, 1024, 256};

}  // namespace

std::string NetworkConfig::to_json() const { return config_json(*this).dump(); }

template <typename T>
NetworkParams<T> NetworkParams<T>::blank() {
  NetworkParams<T> p;
  auto add = [&](std::string name, std::vector<int> shape, T fill, bool learnable) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    p.tensors.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill), learnable});
  };
  for (int i = 0; i < 4; ++i) {
    const std::string c = "conv" + std::to_string(i + 1), b = "bn" + std::to_string(i + 1);
    add(c + ".weight", {kConvOut[i], kConvIn[i], 3, 3}, T(0), true);
    add(c + ".bias", {kConvOut[i]}, T(0), true);
    add(b + ".gamma", {kConvOut[i]}, T(1), true);
    add(b + ".beta", {kConvOut[i]}, T(0), true);
    add(b + ".running_mean", {kConvOut[i]}, T(0), false);
    add(b + ".running_var", {kConvOut[i]}, T(1), false);
  }
  const char* fc_names[3] = {"fc1", "fc2", "head"};
  for (int j = 0; j < 3; ++j) {
    add(std::string(fc_names[j]) + ".weight", {kFcOut[j], kFcIn[j]}, T(0), true);
    add(std::string(fc_names[j]) + ".bias", {kFcOut[j]}, T(0), true);
  }
  return p;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::he_normal(std::uint64_t seed) {
  NetworkParams<T> p = blank();
  Rng rng(seed);
  auto fill = [&](ParamTensor<T>& t, int fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.data) v = static_cast<T>(sd * rng.normal());
  };
  for (int i = 0; i < 4; ++i) fill(p.conv_weight(i), kConvIn[i] * 9);
  for (int j = 0; j < 3; ++j) fill(p.fc_weight(j), kFcIn[j]);
  return p;
}

template <typename T>
std::size_t NetworkParams<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

template <typename T>
void NetworkParams<T>::validate() const {
  const NetworkParams<T> ref = blank();
  if (tensors.size() != ref.tensors.size()) fail(ErrorCode::ShapeMismatch, "wrong number of parameter tensors");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (t.name != ref.tensors[i].name || t.shape != ref.tensors[i].shape ||
        t.data.size() != ref.tensors[i].data.size()) {
      fail(ErrorCode::ShapeMismatch, "parameter tensor " + std::to_string(i) + " (" + t.name + ") has wrong layout");
    }
    const bool is_var = t.name.ends_with(".running_var");
    for (T v : t.data) {
      if (!std::isfinite(static_cast<double>(v))) fail(ErrorCode::InvalidArgument, t.name + " holds non-finite values");
      if (is_var && v < T(0)) fail(ErrorCode::InvalidArgument, t.name + " holds a negative variance");
    }
  }
}

template <typename T>
Gradients<T> zero_gradients(const NetworkParams<T>& params) {
  Gradients<T> g;
  for (const auto& t : params.tensors) g.emplace_back(t.learnable ? t.data.size() : 0, T(0));
  return g;
}

template <typename T>
std::span<const T> Network<T>::forward(std::span<const T> x, int n, bool train) {
  if (n < 1 || x.size() != static_cast<std::size_t>(n) * kSampleFloats) {
    fail(ErrorCode::ShapeMismatch, "network input must be N x 3 x 32 x 32");
  }
  auto& p = *p_;
  n_ = n;
  trained_forward_ = train;
  x_.resize(n, 3, 32, 32);
  std::copy(x.begin(), x.end(), x_.data.begin());

  const Tensor4<T>* in = &x_;
  for (int i = 0; i < 4; ++i) {
    conv3x3_forward<T>(*in, p.conv_weight(i).data, p.conv_bias(i).data, kConvOut[i], conv_[i]);
    batchnorm_forward<T>(conv_[i], p.bn_gamma(i).data, p.bn_beta(i).data, p.bn_mean(i).data, p.bn_var(i).data,
                         train, bn_[i], train ? &bn_cache_[i] : nullptr);
    relu_[i].resize(bn_[i].n, bn_[i].c, bn_[i].h, bn_[i].w);
    relu_forward<T>(bn_[i].data, relu_[i].data);
    if (i == 1 || i == 3) {
      const int k = i / 2;
      maxpool2x2_forward<T>(relu_[i], pool_[k], argmax_[k]);
      in = &pool_[k];
    } else {
      in = &relu_[i];
    }
  }

  fc1_.assign(static_cast<std::size_t>(n) * kFcOut[0], T(0));
  fc_forward<T>(pool_[1].data, n, kFcIn[0], p.fc_weight(0).data, p.fc_bias(0).data, kFcOut[0], fc1_);
  fc1_relu_.resize(fc1_.size());
  relu_forward<T>(fc1_, fc1_relu_);
  fc2_.assign(static_cast<std::size_t>(n) * kFcOut[1], T(0));
  fc_forward<T>(fc1_relu_, n, kFcIn[1], p.fc_weight(1).data, p.fc_bias(1).data, kFcOut[1], fc2_);
  fc2_relu_.resize(fc2_.size());
  relu_forward<T>(fc2_, fc2_relu_);
  logits_.assign(static_cast<std::size_t>(n) * 2, T(0));
  fc_forward<T>(fc2_relu_, n, kFcIn[2], p.fc_weight(2).data, p.fc_bias(2).data, kFcOut[2], logits_);
  return logits_;
}

template <typename T>
void Network<T>::backward(std::span<const T> grad_logits, Gradients<T>& grads, std::vector<T>* grad_input) {
  if (!trained_forward_) fail(ErrorCode::InvalidArgument, "backward needs a preceding train-mode forward");
  if (grad_logits.size() != logits_.size()) fail(ErrorCode::ShapeMismatch, "gradient does not match logits");
  auto& p = *p_;
  if (grads.size() != p.tensors.size()) grads = zero_gradients(p);
  const int n = n_;

  std::vector<T> g2(fc2_relu_.size()), g1(fc1_relu_.size()), gpool(pool_[1].size());
  fc_backward<T>(fc2_relu_, n, kFcIn[2], p.fc_weight(2).data, kFcOut[2], grad_logits, g2, grads[28], grads[29]);
  relu_backward<T>(fc2_relu_, g2, g2);
  fc_backward<T>(fc1_relu_, n, kFcIn[1], p.fc_weight(1).data, kFcOut[1], g2, g1, grads[26], grads[27]);
  relu_backward<T>(fc1_relu_, g1, g1);
  fc_backward<T>(pool_[1].data, n, kFcIn[0], p.fc_weight(0).data, kFcOut[0], g1, gpool, grads[24], grads[25]);

  Tensor4<T> g(n, pool_[1].c, pool_[1].h, pool_[1].w);
  std::copy(gpool.begin(), gpool.end(), g.data.begin());
  Tensor4<T> tmp, gbn;
  for (int i = 3; i >= 0; --i) {
    if (i == 3 || i == 1) {
      maxpool2x2_backward<T>(g, argmax_[i / 2], tmp);
      std::swap(g, tmp);
    }
    relu_backward<T>(relu_[i].data, g.data, g.data);
    batchnorm_backward<T>(g, p.bn_gamma(i).data, bn_cache_[i], gbn, grads[6 * i + 2], grads[6 * i + 3]);
    const Tensor4<T>& conv_in = i == 0 ? x_ : (i == 2 ? pool_[0] : relu_[i - 1]);
    const bool need_in = i > 0 || grad_input != nullptr;
    conv3x3_backward<T>(conv_in, p.conv_weight(i).data, gbn, need_in ? &g : nullptr, grads[6 * i],
                        grads[6 * i + 1]);
  }
  if (grad_input) *grad_input = g.data;
}

template <typename T>
std::vector<std::array<int, 4>> Network<T>::last_shapes() const {
  auto s = [](const Tensor4<T>& t) { return std::array<int, 4>{t.n, t.c, t.h, t.w}; };
  return {s(relu_[0]), s(relu_[1]), s(pool_[0]), s(relu_[2]), s(relu_[3]), s(pool_[1]),
          {n_, kFcOut[0], 1, 1}, {n_, kFcOut[1], 1, 1}, {n_, kFcOut[2], 1, 1}};
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "train config: " + what); };
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) bad("betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) bad("epsilon must be positive");
  if (batch_size < 1 || max_steps < 1 || eval_every < 1 || patience < 1 || jobs < 1) {
    bad("batch_size, max_steps, eval_every, patience and jobs must be positive");
  }
}

template <typename T>
void adam_step(NetworkParams<T>& params, const Gradients<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (grads.size() != params.tensors.size()) fail(ErrorCode::ShapeMismatch, "gradient list does not match params");
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    const auto& pt = params.tensors[t];
    if (!pt.learnable) continue;
    if (grads[t].size() != pt.data.size()) fail(ErrorCode::ShapeMismatch, "gradient for " + pt.name);
    for (std::size_t i = 0; i < pt.data.size(); ++i) {
      const double g = static_cast<double>(grads[t][i]) + cfg.weight_decay * pt.data[i];
      if (!std::isfinite(g)) fail(ErrorCode::NonFiniteGradient, "non-finite gradient in " + pt.name);
    }
  }
  if (state.m.size() != params.tensors.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& pt : params.tensors) {
      state.m.emplace_back(pt.learnable ? pt.data.size() : 0, T(0));
      state.v.emplace_back(pt.learnable ? pt.data.size() : 0, T(0));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), wd = static_cast<T>(cfg.weight_decay);
  const T step = static_cast<T>(cfg.learning_rate / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& pt = params.tensors[t];
    if (!pt.learnable) continue;
    T* th = pt.data.data();
    T* m = state.m[t].data();
    T* v = state.v[t].data();
    const T* gr = grads[t].data();
    const std::size_t n = pt.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T g = gr[i] + wd * th[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      th[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

namespace {

constexpr int kPredictChunk = 64;

void require_payload(const augment::SampleArchive& a, const char* what) {
  if (a.records.empty()) fail(ErrorCode::InvalidArgument, std::string(what) + " archive is empty");
  if (a.payload.size() != a.records.size() * static_cast<std::size_t>(kSampleFloats)) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + " archive has no tensor payload for its records");
  }
}

std::vector<int> archive_labels(const augment::SampleArchive& a, const char* what) {
  std::vector<int> labels;
  labels.reserve(a.records.size());
  for (const auto& r : a.records) {
    if (!r.label) fail(ErrorCode::InvalidArgument, std::string(what) + " samples must be labeled");
    labels.push_back(*r.label);
  }
  return labels;
}

}  // namespace

std::vector<double> predict(const NetworkParams<float>& params, std::span<const float> samples, int jobs) {
  if (samples.size() % kSampleFloats != 0) fail(ErrorCode::ShapeMismatch, "sample buffer is not N x 3 x 32 x 32");
  const std::size_t n = samples.size() / kSampleFloats;
  std::vector<double> out(n);
  if (n == 0) return out;
  const std::size_t chunks = (n + kPredictChunk - 1) / kPredictChunk;
  const std::size_t workers = std::min<std::size_t>(std::max(jobs, 1), chunks);
  parallel_for(workers, static_cast<int>(workers), [&](std::size_t w) {
    NetworkParams<float> local = params;
    Network<float> net(local);
    std::vector<float> probs;
    for (std::size_t c = w; c < chunks; c += workers) {
      const std::size_t lo = c * kPredictChunk, hi = std::min(n, lo + kPredictChunk);
      const int m = static_cast<int>(hi - lo);
      auto logits = net.forward(samples.subspan(lo * kSampleFloats, (hi - lo) * kSampleFloats), m, false);
      for (int i = 0; i < m; ++i) {
        const double l0 = logits[2 * i], l1 = logits[2 * i + 1];
        const double mx = std::max(l0, l1);
        const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
        out[lo + i] = e1 / (e0 + e1);
      }
    }
  });
  return out;
}

std::vector<double> predict(const NetworkParams<float>& params, const augment::SampleArchive& archive, int jobs) {
  require_payload(archive, "prediction");
  return predict(params, std::span<const float>(archive.payload), jobs);
}

std::vector<ensemble::ViewPrediction> to_view_predictions(const std::string& model_id,
                                                          const augment::SampleArchive& archive,
                                                          const std::vector<double>& probs) {
  if (probs.size() != archive.records.size()) fail(ErrorCode::ShapeMismatch, "one probability per sample expected");
  std::vector<ensemble::ViewPrediction> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& r = archive.records[i];
    out.push_back({model_id, r.case_id, r.finding_id, r.view_index, probs[i]});
  }
  return out;
}

double multiview_auc(const augment::SampleArchive& archive, const std::vector<double>& probs) {
  const auto means = ensemble::multiview_average(to_view_predictions("m", archive, probs));
  std::map<ensemble::FindingKey, int> labels;
  for (const auto& r : archive.records) {
    if (!r.label) fail(ErrorCode::InvalidArgument, "validation samples must be labeled");
    labels.emplace(ensemble::FindingKey{r.case_id, r.finding_id}, *r.label);
  }
  std::vector<double> scores;
  std::vector<int> y;
  for (const auto& [key, mean] : means) {
    scores.push_back(mean);
    y.push_back(labels.at(key));
  }
  return metrics::auc(scores, y);
}

TrainedModel train(const augment::SampleArchive& train_set, const augment::SampleArchive& val_set,
                   const TrainConfig& cfg, const std::function<void(const HistoryEntry&)>& on_eval) {
  cfg.validate();
  require_payload(train_set, "training");
  require_payload(val_set, "validation");
  const std::vector<int> labels = archive_labels(train_set, "training");
  archive_labels(val_set, "validation");

  TrainedModel result;
  result.channel_set = train_set.channels.name();
  result.seed = cfg.seed;
  NetworkParams<float> params = NetworkParams<float>::he_normal(cfg.seed);
  Network<float> net(params);
  AdamState<float> adam;
  Gradients<float> grads = zero_gradients(params);

  // Separate stream for sample order and flips so init and data order vary independently.
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t N = train_set.records.size();
  const int bs = static_cast<int>(std::min<std::size_t>(cfg.batch_size, N));
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  std::size_t pos = N;

  std::vector<float> x(static_cast<std::size_t>(bs) * kSampleFloats);
  std::vector<int> y(bs);
  std::vector<float> probs(2 * bs), glog(2 * bs);
  double loss_sum = 0.0;
  int loss_count = 0, stale = 0;
  bool have_best = false;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    if (pos + bs > N) {
      rng.shuffle(order);
      pos = 0;
    }
    for (int b = 0; b < bs; ++b) {
      const std::size_t idx = order[pos + b];
      auto src = train_set.sample(idx);
      std::span<float> dst(x.data() + static_cast<std::size_t>(b) * kSampleFloats, kSampleFloats);
      std::copy(src.begin(), src.end(), dst.begin());
      if (cfg.mirror && rng.bernoulli(0.5)) augment::mirror_horizontal(dst);
      y[b] = labels[idx];
    }
    pos += bs;

    auto logits = net.forward(x, bs, true);
    loss_sum += softmax_xent<float>(logits, y, probs, glog);
    ++loss_count;
    net.backward(glog, grads);
    adam_step(params, grads, adam, cfg);

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double auc = multiview_auc(val_set, predict(params, val_set, cfg.jobs));
      HistoryEntry h{step, loss_sum / loss_count, auc};
      result.history.push_back(h);
      if (on_eval) on_eval(h);
      loss_sum = 0.0;
      loss_count = 0;
      if (!have_best || auc > result.best_val_auc) {
        have_best = true;
        result.best_val_auc = auc;
        result.best_step = step;
        result.params = params;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return result;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  model.params.validate();
  std::vector<float> payload;
  payload.reserve(model.params.total_size());
  json tensors = json::array();
  for (const auto& t : model.params.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", payload.size() * sizeof(float)}});
    payload.insert(payload.end(), t.data.begin(), t.data.end());
  }
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(payload.data()),
                                            payload.size() * sizeof(float));
  json hist = json::array();
  for (const auto& h : model.history) {
    hist.push_back({{"step", h.step}, {"train_loss", h.train_loss}, {"val_auc", h.val_auc}});
  }
  const std::string raw_name = path.filename().string() + ".raw";
  json j;
  j["format_version"] = kModelFormatVersion;
  j["architecture"] = config_json(NetworkConfig::xmasnet());
  j["channel_set"] = model.channel_set;
  j["seed"] = model.seed;
  j["best_step"] = model.best_step;
  j["best_val_auc"] = model.best_val_auc;
  j["history"] = std::move(hist);
  j["dtype"] = "f32le";
  j["tensors"] = std::move(tensors);
  j["payload_file"] = raw_name;
  j["payload_sha256"] = sha256_hex(bytes);
  write_file_bytes(path.parent_path() / raw_name, bytes);
  write_text_file(path, j.dump(2) + "\n");
}

TrainedModel load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  TrainedModel model;
  NetworkParams<float> params = NetworkParams<float>::blank();
  std::string payload_file, digest;
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      fail(ErrorCode::VersionMismatch, path.string() + ": unsupported model format_version");
    }
    // Key order is not significant when comparing the echo.
    if (nlohmann::json::parse(j.at("architecture").dump()) !=
        nlohmann::json::parse(config_json(NetworkConfig::xmasnet()).dump())) {
      fail(ErrorCode::VersionMismatch, path.string() + ": architecture does not match this network");
    }
    if (j.at("dtype").get<std::string>() != "f32le") fail(ErrorCode::UnsupportedDtype, path.string());
    model.channel_set = j.at("channel_set").get<std::string>();
    model.seed = j.at("seed").get<std::uint64_t>();
    model.best_step = j.at("best_step").get<int>();
    model.best_val_auc = j.at("best_val_auc").get<double>();
    for (const auto& h : j.at("history")) {
      model.history.push_back(
          {h.at("step").get<int>(), h.at("train_loss").get<double>(), h.at("val_auc").get<double>()});
    }
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.tensors.size()) fail(ErrorCode::ShapeMismatch, "model tensor count");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = params.tensors[i];
      if (tensors[i].at("name").get<std::string>() != t.name ||
          tensors[i].at("shape").get<std::vector<int>>() != t.shape ||
          tensors[i].at("offset").get<std::size_t>() != offset) {
        fail(ErrorCode::ShapeMismatch, path.string() + ": tensor " + t.name + " does not match the network");
      }
      offset += t.data.size() * sizeof(float);
    }
    payload_file = j.at("payload_file").get<std::string>();
    digest = j.at("payload_sha256").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }

  const auto bytes = read_file_bytes(path.parent_path() / payload_file);
  if (sha256_hex(bytes) != digest) fail(ErrorCode::ChecksumMismatch, path.string() + ": payload sha256 differs");
  if (bytes.size() != params.total_size() * sizeof(float)) {
    fail(ErrorCode::ChecksumMismatch, path.string() + ": payload length differs from tensor table");
  }
  std::size_t off = 0;
  for (auto& t : params.tensors) {
    std::memcpy(t.data.data(), bytes.data() + off, t.data.size() * sizeof(float));
    off += t.data.size() * sizeof(float);
  }
  params.validate();
  model.params = std::move(params);
  return model;
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template class Network<float>;
template class Network<double>;
template Gradients<float> zero_gradients(const NetworkParams<float>&);
template Gradients<double> zero_gradients(const NetworkParams<double>&);
template void adam_step(NetworkParams<float>&, const Gradients<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(NetworkParams<double>&, const Gradients<double>&, AdamState<double>&, const TrainConfig&);

}  // namespace lesionkit::xmasnet
