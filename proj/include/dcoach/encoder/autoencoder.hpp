#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dcoach/encoder/dataset.hpp"
#include "dcoach/log.hpp"
#include "dcoach/nn/optimizer.hpp"
#include "dcoach/nn/serialize.hpp"

namespace dcoach::encoder {

// Convolutional encoder / deconvolutional decoder pair for single-channel H x W frames.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(nn::Network encoder, nn::Network decoder) : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
    if (encoder_.output_shape().size() != 1) throw nn::NetworkError("encoder must output a flat latent vector");
    if (decoder_.input_shape() != encoder_.output_shape()) {
      throw nn::NetworkError("decoder input " + shape_str(decoder_.input_shape()) + " does not match encoder output " +
                             shape_str(encoder_.output_shape()));
    }
    if (decoder_.output_shape() != encoder_.input_shape()) {
      throw nn::NetworkError("decoder output " + shape_str(decoder_.output_shape()) + " does not match encoder input " +
                             shape_str(encoder_.input_shape()));
    }
  }

  // conv(8,k4,s2) -> conv(16,k3,s2) -> dense(latent, tanh); mirrored decoder ending in a sigmoid.
  // Valid padding makes this exact for 64 x 64 frames (64 -> 31 -> 15 -> 31 -> 64).
  static Autoencoder build(std::size_t height, std::size_t width, std::size_t latent_dim, std::uint64_t seed) {
    using nn::Activation;
    using nn::LayerSpec;
    const Shape in{1, height, width};
    nn::Network enc(in, {LayerSpec::conv2d(8, 4, 4, 2, Activation::relu), LayerSpec::conv2d(16, 3, 3, 2, Activation::relu),
                         LayerSpec::flatten(), LayerSpec::dense(latent_dim, Activation::tanh)});
    const Shape conv_out = enc.layer_output_shape(1);
    nn::Network dec(Shape{latent_dim},
                    {LayerSpec::dense(shape_size(conv_out), Activation::relu), LayerSpec::reshape(conv_out),
                     LayerSpec::deconv2d(8, 3, 3, 2, Activation::relu), LayerSpec::deconv2d(1, 4, 4, 2, Activation::sigmoid)});
    if (dec.output_shape() != in) {
      throw nn::NetworkError("autoencoder architecture does not reproduce frame shape " + shape_str(in) + " (decoder gives " +
                             shape_str(dec.output_shape()) + ")");
    }
    std::mt19937_64 rng(seed);
    enc.init_glorot(rng);
    dec.init_glorot(rng);
    return Autoencoder(std::move(enc), std::move(dec));
  }

  const nn::Network& encoder() const { return encoder_; }
  const nn::Network& decoder() const { return decoder_; }
  nn::Network& mutable_decoder() { return decoder_; }
  nn::Network& mutable_encoder() { return encoder_; }
  std::size_t latent_dim() const { return encoder_.output_shape()[0]; }
  Shape frame_shape() const { return {encoder_.input_shape()[1], encoder_.input_shape()[2]}; }

  Tensor encode(const Tensor& frame) const { return encoder_.forward(as_input(frame)); }

  Tensor reconstruct(const Tensor& frame) const {
    return decoder_.forward(encode(frame)).reshaped(frame.shape());
  }

  std::uint64_t encoder_checksum() const { return nn::weights_checksum(encoder_); }

  // Reshapes H x W (or already 1 x H x W) to the encoder's input, rejecting anything else.
  Tensor as_input(const Tensor& frame) const {
    const Shape fs = frame_shape();
    if (frame.shape() == encoder_.input_shape()) return frame;
    if (frame.shape() != fs) {
      throw nn::NetworkError("encode: frame shape " + shape_str(frame.shape()) + " does not match training shape " +
                             shape_str(fs));
    }
    return frame.reshaped(encoder_.input_shape());
  }

  nlohmann::json manifest() const {
    return {{"format", "dcoach-autoencoder"},
            {"version", 1},
            {"latent_dim", latent_dim()},
            {"input_shape", frame_shape()},
            {"encoder", "encoder.dcnn"},
            {"decoder", "decoder.dcnn"},
            {"encoder_checksum", hex64(encoder_checksum())}};
  }

  // Writes encoder.dcnn, decoder.dcnn and manifest.json into `dir`.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nn::save_weights(encoder_, dir / "encoder.dcnn");
    nn::save_weights(decoder_, dir / "decoder.dcnn");
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write '" + (dir / "manifest.json").string() + "'");
    os << manifest().dump(2) << '\n';
  }

  // Accepts the model directory or its manifest.json.
  static Autoencoder load(const std::filesystem::path& where) {
    const auto manifest_path = std::filesystem::is_directory(where) ? where / "manifest.json" : where;
    const auto dir = manifest_path.parent_path();
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("missing autoencoder manifest '" + manifest_path.string() + "'");
    const auto m = nlohmann::json::parse(is);
    const auto shape = m.at("input_shape").get<Shape>();
    if (shape.size() != 2) throw FormatError("autoencoder manifest input_shape must be [H, W]");
    auto enc = nn::load_weights(dir / m.at("encoder").get<std::string>(), Shape{1, shape[0], shape[1]});
    auto dec = nn::load_weights(dir / m.at("decoder").get<std::string>());
    Autoencoder ae(std::move(enc), std::move(dec));
    if (ae.latent_dim() != m.at("latent_dim").get<std::size_t>()) {
      throw FormatError("autoencoder manifest latent_dim disagrees with encoder weights");
    }
    return ae;
  }

 private:
  nn::Network encoder_;
  nn::Network decoder_;
};

struct AutoencoderTrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 2.0;  // per-pixel mean loss keeps gradients small
  std::size_t batch_size = 16;
  std::size_t latent_dim = 64;
  std::uint64_t seed = 0;
  nn::OptimizerConfig optimizer;
};

struct EpochLoss {
  std::size_t epoch;
  double loss;
};

class AutoencoderDiverged : public std::runtime_error {
 public:
  AutoencoderDiverged(const std::string& msg, std::size_t last_good_epoch, Autoencoder last_good)
      : std::runtime_error(msg), last_good_epoch(last_good_epoch), last_good(std::move(last_good)) {}
  std::size_t last_good_epoch;
  Autoencoder last_good;
};

struct TrainedAutoencoder {
  Autoencoder model;
  std::vector<EpochLoss> curve;
};

namespace detail {

// Encoder and decoder chained as one network so one backward pass covers both halves.
inline nn::Network chain(const Autoencoder& ae) {
  auto specs = ae.encoder().specs();
  for (const auto& s : ae.decoder().specs()) specs.push_back(s);
  nn::Network net(ae.encoder().input_shape(), specs);
  std::size_t k = 0;
  for (const auto& p : ae.encoder().params()) net.params()[k++] = p;
  for (const auto& p : ae.decoder().params()) net.params()[k++] = p;
  return net;
}

inline void unchain(const nn::Network& net, Autoencoder& ae) {
  std::size_t k = 0;
  for (auto& p : ae.mutable_encoder().params()) p = net.params()[k++];
  for (auto& p : ae.mutable_decoder().params()) p = net.params()[k++];
}

}  // namespace detail

// Mean pixel MSE of the reconstructions.
inline double reconstruction_mse(const Autoencoder& ae, const std::vector<Tensor>& frames) {
  if (frames.empty()) return 0.0;
  double total = 0;
  for (const auto& f : frames) {
    const Tensor r = ae.reconstruct(f);
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = static_cast<double>(r[i]) - f[i];
      s += d * d;
    }
    total += s / static_cast<double>(f.size());
  }
  return total / static_cast<double>(frames.size());
}

// MSE of always predicting the per-pixel mean of `fit` on `eval`.
inline double mean_image_mse(const std::vector<Tensor>& fit, const std::vector<Tensor>& eval) {
  if (fit.empty() || eval.empty()) return 0.0;
  std::vector<double> mean(fit.front().size(), 0.0);
  for (const auto& f : fit) {
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i];
  }
  for (auto& m : mean) m /= static_cast<double>(fit.size());
  double total = 0;
  for (const auto& f : eval) {
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - mean[i]) * (f[i] - mean[i]);
    total += s / static_cast<double>(f.size());
  }
  return total / static_cast<double>(eval.size());
}

// Deterministic 90/10 split by a seeded shuffle of frame indices.
inline std::pair<std::vector<Tensor>, std::vector<Tensor>> split_dataset(const ExplorationDataset& data, double held_out,
                                                                          std::uint64_t seed) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(held_out * static_cast<double>(data.size())));
  std::vector<Tensor> train, test;
  for (std::size_t k = 0; k < idx.size(); ++k) (k < n_test ? test : train).push_back(data.frames[idx[k]]);
  return {std::move(train), std::move(test)};
}

inline TrainedAutoencoder train_autoencoder(const std::vector<Tensor>& frames, const AutoencoderTrainConfig& cfg,
                                            const std::function<void(const EpochLoss&)>& on_epoch = {}) {
  if (frames.empty()) throw std::invalid_argument("train_autoencoder: dataset is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_autoencoder: batch size must be positive");
  const Shape fs = frames.front().shape();
  if (fs.size() != 2) throw std::invalid_argument("train_autoencoder: frames must be H x W");
  TrainedAutoencoder out{Autoencoder::build(fs[0], fs[1], cfg.latent_dim, cfg.seed), {}};
  if (cfg.epochs == 0) return out;

  nn::Network net = detail::chain(out.model);
  nn::Optimizer<float> opt(cfg.optimizer, net);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ull);
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t px = shape_size(fs);
  Autoencoder last_good = out.model;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Tensor batch(Shape{n, 1, fs[0], fs[1]});
      for (std::size_t k = 0; k < n; ++k) {
        const auto& f = frames[order[start + k]];
        if (f.shape() != fs) throw std::invalid_argument("train_autoencoder: frames differ in shape");
        std::copy(f.begin(), f.end(), batch.begin() + static_cast<std::ptrdiff_t>(k * px));
      }
      try {
        auto r = nn::backward(net, batch, batch);
        if (!std::isfinite(r.loss) || !r.grads.all_finite()) {
          diverged = true;
          break;
        }
        opt.step(net, r.grads, static_cast<float>(cfg.learning_rate));
        loss_sum += r.loss;
        ++batches;
      } catch (const nn::NumericError&) {
        diverged = true;
        break;
      }
    }
    if (diverged) {
      throw AutoencoderDiverged("autoencoder training diverged in epoch " + std::to_string(epoch) +
                                    "; last good checkpoint is epoch " + std::to_string(epoch - 1),
                                epoch - 1, last_good);
    }
    detail::unchain(net, out.model);
    last_good = out.model;
    EpochLoss e{epoch, loss_sum / static_cast<double>(batches)};
    out.curve.push_back(e);
    log::info("autoencoder epoch ", epoch, " loss ", e.loss);
    if (on_epoch) on_epoch(e);
  }
  return out;
}

}  // namespace dcoach::encoder
