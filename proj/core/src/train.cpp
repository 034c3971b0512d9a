#include "quiver/train.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "quiver/error.hpp"
#include "quiver/parallel.hpp"

namespace quiver {

std::string_view to_string(Optimizer o) noexcept {
  switch (o) {
    case Optimizer::sgd: return "sgd";
    case Optimizer::momentum: return "momentum";
    case Optimizer::adam: return "adam";
  }
  return "sgd";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd" || name == "SGD") return Optimizer::sgd;
  if (name == "momentum" || name == "Momentum") return Optimizer::momentum;
  if (name == "adam" || name == "Adam") return Optimizer::adam;
  fail(ErrorCode::InvalidArgument, "unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  if (batch_size == 0) fail(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (epochs == 0) fail(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::InvalidArgument, "dropout must be in [0, 1)");
  if (weight_decay < 0.0) fail(ErrorCode::InvalidArgument, "weight decay must be >= 0");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  if (lr_step == 0) return lr;
  return lr * std::pow(0.1, static_cast<double>(epoch / lr_step));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"optimizer", to_string(optimizer)}, {"lr", lr},         {"batch_size", batch_size},
          {"epochs", epochs},                  {"lr_step", lr_step}, {"weight_decay", weight_decay},
          {"dropout", dropout},                {"seed", seed},       {"momentum", momentum},
          {"beta1", beta1},                    {"beta2", beta2},     {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.optimizer = parse_optimizer(j.value("optimizer", std::string("adam")));
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr_step = j.value("lr_step", c.lr_step);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.dropout = j.value("dropout", c.dropout);
    c.seed = j.value("seed", c.seed);
    c.momentum = j.value("momentum", c.momentum);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;

struct FloatLayer {
  MatF weight;
  VecF bias;
};

struct FloatNet {
  std::vector<FloatLayer> layers;
  bool relu = true;
};

FloatNet to_float(const Mlp& mlp) {
  FloatNet net;
  net.relu = mlp.activation() == Activation::relu;
  for (const auto& l : mlp.layers()) net.layers.push_back({l.weight.cast<float>(), l.bias.cast<float>()});
  return net;
}

Mlp to_double(const Mlp& like, const FloatNet& net) {
  std::vector<DenseLayer> layers;
  for (const auto& l : net.layers) layers.push_back({l.weight.cast<double>(), l.bias.cast<double>()});
  return Mlp(like.spec(), std::move(layers));
}

MatF gather(const Dataset& data, std::span<const std::size_t> idx) {
  MatF x(static_cast<Eigen::Index>(data.dim), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto img = data.image(idx[c]);
    std::copy(img.begin(), img.end(), x.col(static_cast<Eigen::Index>(c)).data());
  }
  return x;
}

// Column-wise softmax cross-entropy. Writes d loss / d logits (unscaled by
// batch size) into grad and returns the summed loss; counts correct argmax.
double softmax_ce_batch(const MatF& logits, std::span<const std::uint8_t> labels, MatF& grad, std::size_t& correct) {
  grad.resize(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const auto col = logits.col(c);
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < col.size(); ++r) {
      if (col(r) > col(best)) best = r;
    }
    const float m = col(best);
    const auto e = (col.array() - m).exp();
    const float s = e.sum();
    grad.col(c) = e / s;
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]);
    loss += static_cast<double>(std::log(s) + m - col(y));
    grad(y, c) -= 1.0f;
    correct += best == y;
  }
  return loss;
}

class Optimiser {
 public:
  Optimiser(const TrainConfig& cfg, const FloatNet& net) : cfg_(cfg) {
    for (const auto& l : net.layers) {
      m_.push_back({MatF::Zero(l.weight.rows(), l.weight.cols()), VecF::Zero(l.bias.size())});
      v_.push_back({MatF::Zero(l.weight.rows(), l.weight.cols()), VecF::Zero(l.bias.size())});
    }
  }

  void step(FloatNet& net, std::vector<FloatLayer>& grads, float lr) {
    ++t_;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& p = net.layers[l];
      auto& g = grads[l];
      if (cfg_.weight_decay > 0.0) {
        g.weight += static_cast<float>(cfg_.weight_decay) * p.weight;
        g.bias += static_cast<float>(cfg_.weight_decay) * p.bias;
      }
      update(p.weight, g.weight, m_[l].weight, v_[l].weight, lr);
      update(p.bias, g.bias, m_[l].bias, v_[l].bias, lr);
    }
  }

 private:
  template <class P>
  void update(P& param, const P& grad, P& m, P& v, float lr) {
    switch (cfg_.optimizer) {
      case Optimizer::sgd:
        param -= lr * grad;
        break;
      case Optimizer::momentum:
        m = static_cast<float>(cfg_.momentum) * m + grad;
        param -= lr * m;
        break;
      case Optimizer::adam: {
        const float b1 = static_cast<float>(cfg_.beta1);
        const float b2 = static_cast<float>(cfg_.beta2);
        m = b1 * m + (1.0f - b1) * grad;
        v = b2 * v + (1.0f - b2) * grad.cwiseProduct(grad);
        const float c1 = 1.0f - static_cast<float>(std::pow(cfg_.beta1, static_cast<double>(t_)));
        const float c2 = 1.0f - static_cast<float>(std::pow(cfg_.beta2, static_cast<double>(t_)));
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + static_cast<float>(cfg_.adam_eps));
        break;
      }
    }
  }

  const TrainConfig& cfg_;
  std::vector<FloatLayer> m_;
  std::vector<FloatLayer> v_;
  std::uint64_t t_ = 0;
};

std::pair<double, double> evaluate_float(const FloatNet& net, const Dataset& data) {
  if (data.size() == 0) return {0.0, 0.0};
  constexpr std::size_t kBlock = 512;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  MatF grad;
  for (std::size_t begin = 0; begin < data.size(); begin += kBlock) {
    const std::size_t end = std::min(data.size(), begin + kBlock);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    MatF a = gather(data, idx);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      MatF z = net.layers[l].weight * a;
      z.colwise() += net.layers[l].bias;
      if (l + 1 < net.layers.size() && net.relu) z = z.cwiseMax(0.0f);
      a = std::move(z);
    }
    loss += softmax_ce_batch(a, std::span(data.labels).subspan(begin, end - begin), grad, correct);
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

std::pair<double, double> evaluate(const Mlp& mlp, const Dataset& data) { return evaluate_float(to_float(mlp), data); }

TrainResult train(const Mlp& init, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) fail(ErrorCode::InvalidArgument, "training set is empty");
  if (train_set.dim != init.input_dim()) fail(ErrorCode::ShapeMismatch, "dataset dimension differs from model input");

  FloatNet net = to_float(init);
  Optimiser opt(cfg, net);
  const std::size_t depth = net.layers.size();
  const float keep = static_cast<float>(1.0 - cfg.dropout);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<MatF> acts(depth + 1);  // acts[0] = input, acts[l+1] = output of layer l
  std::vector<MatF> masks(depth);
  std::vector<FloatLayer> grads(depth);
  std::vector<std::uint8_t> batch_labels;
  MatF delta;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x5348u, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    const float lr = static_cast<float>(cfg.lr_at(epoch));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const auto idx = std::span(order).subspan(begin, end - begin);
      const float inv_batch = 1.0f / static_cast<float>(idx.size());
      batch_labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = train_set.labels[idx[i]];

      acts[0] = gather(train_set, idx);
      for (std::size_t l = 0; l < depth; ++l) {
        MatF z = net.layers[l].weight * acts[l];
        z.colwise() += net.layers[l].bias;
        if (l + 1 < depth) {
          if (net.relu) z = z.cwiseMax(0.0f);
          if (cfg.dropout > 0.0) {
            masks[l].resize(z.rows(), z.cols());
            for (Eigen::Index k = 0; k < masks[l].size(); ++k) masks[l](k) = unit(rng) < keep ? 1.0f / keep : 0.0f;
            z.array() *= masks[l].array();
          }
        }
        acts[l + 1] = std::move(z);
      }

      loss_sum += softmax_ce_batch(acts[depth], batch_labels, delta, correct);
      if (!std::isfinite(loss_sum)) {
        fail(ErrorCode::DivergedLoss, "non-finite loss in epoch " + std::to_string(epoch));
      }
      delta *= inv_batch;

      for (std::size_t l = depth; l-- > 0;) {
        grads[l].weight.noalias() = delta * acts[l].transpose();
        grads[l].bias = delta.rowwise().sum();
        if (l == 0) break;
        MatF upstream = net.layers[l].weight.transpose() * delta;
        // acts[l] is the post-dropout activation of layer l-1: zero wherever
        // the ReLU was inactive or the unit was dropped.
        if (net.relu) upstream.array() *= (acts[l].array() > 0.0f).cast<float>();
        if (cfg.dropout > 0.0) upstream.array() *= masks[l - 1].array();
        delta = std::move(upstream);
      }
      opt.step(net, grads, lr);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (test_set != nullptr) std::tie(stats.test_loss, stats.test_accuracy) = evaluate_float(net, *test_set);
    result.curves.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.model = to_double(init, net);
  return result;
}

}  // namespace quiver
