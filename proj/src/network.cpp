#include "detcal/network.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace detcal {

Architecture Architecture::mlp(int input_features, int max_rows, int num_classes) {
  Architecture a;
  a.variant = ArchVariant::kMlp;
  a.input_features = input_features;
  a.max_rows = max_rows;
  a.num_classes = num_classes;
  a.feature_widths = {2048, 2048, 2048};
  return a;
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layers : {&feature_layers, &classifier})
    for (const auto& l : *layers) n += l.weights.size() + l.bias.size();
  return n;
}

ModelParameters init_parameters(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make_layer = [&rng](int out, int in) {
    DenseLayer l;
    l.weights.resize(out, in);
    const double limit = std::sqrt(3.0 / in);
    std::uniform_real_distribution<double> uni(-limit, limit);
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = uni(rng);
    l.bias = Eigen::VectorXd::Zero(out);
    return l;
  };

  ModelParameters p;
  p.arch = arch;
  int in = arch.feature_input_width();
  for (int w : arch.feature_widths) {
    p.feature_layers.push_back(make_layer(w, in));
    in = w;
  }
  in = arch.classifier_input_width();
  for (int w : arch.classifier_hidden) {
    p.classifier.push_back(make_layer(w, in));
    in = w;
  }
  p.classifier.push_back(make_layer(arch.num_classes, in));
  return p;
}

RowSet to_rowset(const FeatureMatrix& m) {
  RowSet r;
  r.rows = m.values.topRows(m.valid_rows);
  r.padded_rows = static_cast<int>(m.values.rows());
  return r;
}

namespace {

struct Trace {
  // set_cnn row path
  std::vector<Eigen::MatrixXd> row_pre;   // per layer, valid_rows x width
  std::vector<Eigen::MatrixXd> row_act;
  // literal-pool virtual zero row
  bool has_virtual = false;
  std::vector<Eigen::VectorXd> zero_pre;
  std::vector<Eigen::VectorXd> zero_act;
  Eigen::VectorXd pooled;
  Eigen::VectorXi pool_argmax;  // row index per channel, -1 = virtual row, -2 = none
  // mlp path
  Eigen::VectorXd flat_input;   // valid part only
  std::vector<Eigen::VectorXd> mlp_pre;
  std::vector<Eigen::VectorXd> mlp_act;
  // classifier
  Eigen::VectorXd cls_input;
  std::vector<Eigen::VectorXd> cls_pre;
  std::vector<Eigen::VectorXd> cls_act;
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

void check_shapes(const ModelParameters& p, const RowSet& input,
                  const ImageEmbedding* embedding) {
  if (input.rows.cols() != p.arch.input_features && input.valid_rows() > 0)
    throw std::invalid_argument("feature width mismatch");
  if (input.valid_rows() > p.arch.max_rows)
    throw std::invalid_argument("more valid rows than the architecture allows");
  if (p.arch.embedding_dim > 0) {
    if (!embedding) throw std::invalid_argument("architecture expects embeddings");
    if (embedding->global_vec.size() != p.arch.embedding_dim ||
        embedding->target_vec.size() != p.arch.embedding_dim)
      throw std::invalid_argument("embedding dimension mismatch");
  }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Trace forward_trace(const ModelParameters& p, const RowSet& input,
                    const ImageEmbedding* embedding) {
  check_shapes(p, input, embedding);
  const Architecture& arch = p.arch;
  Trace t;
  const int v = input.valid_rows();

  Eigen::VectorXd feature_out;
  if (arch.variant == ArchVariant::kSetCnn) {
    // Shared affine + ReLU per support row.
    Eigen::MatrixXd act = input.rows;
    if (v == 0) act.resize(0, arch.input_features);
    for (const auto& l : p.feature_layers) {
      // One matrix-vector product per row: every row takes the identical
      // code path, so the response is bitwise independent of row order
      // (a single matrix product is not -- its kernel blocking makes the
      // accumulation order depend on the row position).
      Eigen::MatrixXd pre(act.rows(), l.weights.rows());
      for (Eigen::Index r = 0; r < act.rows(); ++r)
        pre.row(r) = (l.weights * act.row(r).transpose() + l.bias).transpose();
      t.row_pre.push_back(pre);
      t.row_act.push_back(pre.cwiseMax(0.0));
      act = t.row_act.back();
    }
    // Zero-padded rows all share one response; only literal pooling sees it.
    t.has_virtual = arch.pool == PoolMode::kLiteral && input.padded_rows > v;
    if (t.has_virtual) {
      Eigen::VectorXd za = Eigen::VectorXd::Zero(arch.input_features);
      for (const auto& l : p.feature_layers) {
        Eigen::VectorXd pre = l.weights * za + l.bias;
        t.zero_pre.push_back(pre);
        t.zero_act.push_back(pre.cwiseMax(0.0));
        za = t.zero_act.back();
      }
    }

    const int width = arch.feature_widths.back();
    t.pooled = Eigen::VectorXd::Zero(width);
    t.pool_argmax = Eigen::VectorXi::Constant(width, -2);
    for (int k = 0; k < width; ++k) {
      double best = t.has_virtual ? t.zero_act.back()[k] : 0.0;
      int best_row = t.has_virtual ? -1 : -2;
      for (int r = 0; r < v; ++r) {
        const double val = t.row_act.back()(r, k);
        // First maximal valid row wins ties, including against the zero row.
        if (best_row < -1 || val >= best) {
          if (best_row >= 0 && val <= best) continue;
          best = val;
          best_row = r;
        }
      }
      if (best_row != -2) {
        t.pooled[k] = best;
        t.pool_argmax[k] = best_row;
      }
    }
    feature_out = t.pooled;
  } else {
    // Flattened rows, leading valid block only (the rest is zero).
    const int n = arch.input_features;
    t.flat_input.resize(static_cast<Eigen::Index>(v) * n);
    for (int r = 0; r < v; ++r) t.flat_input.segment(r * n, n) = input.rows.row(r);
    Eigen::VectorXd act = t.flat_input;
    bool first = true;
    for (const auto& l : p.feature_layers) {
      Eigen::VectorXd pre;
      if (first)
        pre = l.weights.leftCols(act.size()) * act + l.bias;
      else
        pre = l.weights * act + l.bias;
      first = false;
      t.mlp_pre.push_back(pre);
      t.mlp_act.push_back(pre.cwiseMax(0.0));
      act = t.mlp_act.back();
    }
    feature_out = t.mlp_act.back();
  }

  if (arch.embedding_dim > 0) {
    t.cls_input.resize(feature_out.size() + 2 * arch.embedding_dim);
    t.cls_input << feature_out, embedding->global_vec, embedding->target_vec;
  } else {
    t.cls_input = feature_out;
  }

  Eigen::VectorXd act = t.cls_input;
  for (std::size_t i = 0; i + 1 < p.classifier.size(); ++i) {
    Eigen::VectorXd pre = p.classifier[i].weights * act + p.classifier[i].bias;
    t.cls_pre.push_back(pre);
    t.cls_act.push_back(pre.cwiseMax(0.0));
    act = t.cls_act.back();
  }
  t.logits = p.classifier.back().weights * act + p.classifier.back().bias;
  t.probs = softmax(t.logits);
  return t;
}

}  // namespace

ForwardResult forward(const ModelParameters& params, const RowSet& input,
                      const ImageEmbedding* embedding) {
  Trace t = forward_trace(params, input, embedding);
  return {std::move(t.logits), std::move(t.probs)};
}

Gradients::Gradients(const Architecture& arch) {
  int in = arch.feature_input_width();
  bool first = true;
  for (int w : arch.feature_widths) {
    DenseLayer g;
    // The first layer's weight gradient grows on demand (see header).
    g.weights = Eigen::MatrixXd::Zero(w, first ? 0 : in);
    g.bias = Eigen::VectorXd::Zero(w);
    feature_layers.push_back(std::move(g));
    first = false;
    in = w;
  }
  in = arch.classifier_input_width();
  for (int w : arch.classifier_hidden) {
    classifier.push_back({Eigen::MatrixXd::Zero(w, in), Eigen::VectorXd::Zero(w)});
    in = w;
  }
  classifier.push_back(
      {Eigen::MatrixXd::Zero(arch.num_classes, in), Eigen::VectorXd::Zero(arch.num_classes)});
}

void Gradients::ensure_first_layer_cols(int cols) {
  auto& w = feature_layers[0].weights;
  if (cols > w.cols()) {
    Eigen::MatrixXd bigger = Eigen::MatrixXd::Zero(w.rows(), cols);
    bigger.leftCols(w.cols()) = w;
    w.swap(bigger);
  }
  first_layer_cols = std::max(first_layer_cols, cols);
}

void Gradients::accumulate(const Gradients& other) {
  ensure_first_layer_cols(other.first_layer_cols);
  if (other.first_layer_cols > 0)
    feature_layers[0].weights.leftCols(other.first_layer_cols) +=
        other.feature_layers[0].weights.leftCols(other.first_layer_cols);
  feature_layers[0].bias += other.feature_layers[0].bias;
  for (std::size_t i = 1; i < feature_layers.size(); ++i) {
    feature_layers[i].weights += other.feature_layers[i].weights;
    feature_layers[i].bias += other.feature_layers[i].bias;
  }
  for (std::size_t i = 0; i < classifier.size(); ++i) {
    classifier[i].weights += other.classifier[i].weights;
    classifier[i].bias += other.classifier[i].bias;
  }
}

double backward(const ModelParameters& p, const RowSet& input,
                const ImageEmbedding* embedding, int truth_label, Gradients& grads) {
  const Architecture& arch = p.arch;
  if (truth_label < 0 || truth_label >= arch.num_classes)
    throw std::invalid_argument("truth label out of range");
  Trace t = forward_trace(p, input, embedding);

  const double max_logit = t.logits.maxCoeff();
  const double lse = max_logit + std::log((t.logits.array() - max_logit).exp().sum());
  const double loss = lse - t.logits[truth_label];

  Eigen::VectorXd d = t.probs;
  d[truth_label] -= 1.0;

  // Classifier, last layer first.
  for (int i = static_cast<int>(p.classifier.size()) - 1; i >= 0; --i) {
    const Eigen::VectorXd& act = i == 0 ? t.cls_input : t.cls_act[i - 1];
    grads.classifier[i].weights.noalias() += d * act.transpose();
    grads.classifier[i].bias += d;
    if (i > 0) {
      Eigen::VectorXd dprev = p.classifier[i].weights.transpose() * d;
      d = (t.cls_pre[i - 1].array() > 0.0).select(dprev, 0.0);
    } else {
      d = p.classifier[i].weights.transpose() * d;
    }
  }
  const int feat_width = arch.feature_widths.back();
  Eigen::VectorXd d_feature = d.head(feat_width);  // embedding inputs take no gradient

  const int num_layers = static_cast<int>(p.feature_layers.size());
  if (arch.variant == ArchVariant::kSetCnn) {
    const int v = input.valid_rows();
    Eigen::MatrixXd base = input.rows;
    if (v == 0) base.resize(0, arch.input_features);
    Eigen::MatrixXd d_rows = Eigen::MatrixXd::Zero(v, feat_width);
    Eigen::VectorXd d_zero = Eigen::VectorXd::Zero(feat_width);
    for (int k = 0; k < feat_width; ++k) {
      const int r = t.pool_argmax[k];
      if (r >= 0)
        d_rows(r, k) = d_feature[k];
      else if (r == -1)
        d_zero[k] = d_feature[k];
    }

    for (int l = num_layers - 1; l >= 0; --l) {
      Eigen::MatrixXd dz = (t.row_pre[l].array() > 0.0).select(d_rows, 0.0);
      const Eigen::MatrixXd& act_prev = l == 0 ? base : t.row_act[l - 1];
      if (l == 0) {
        grads.ensure_first_layer_cols(arch.input_features);
        grads.feature_layers[0].weights.leftCols(arch.input_features).noalias() +=
            dz.transpose() * act_prev;
      } else {
        grads.feature_layers[l].weights.noalias() += dz.transpose() * act_prev;
      }
      grads.feature_layers[l].bias += dz.colwise().sum().transpose();
      if (l > 0) d_rows = dz * p.feature_layers[l].weights;
    }
    if (t.has_virtual) {
      Eigen::VectorXd dv = d_zero;
      for (int l = num_layers - 1; l >= 0; --l) {
        Eigen::VectorXd dz = (t.zero_pre[l].array() > 0.0).select(dv, 0.0);
        if (l > 0) {
          grads.feature_layers[l].weights.noalias() += dz * t.zero_act[l - 1].transpose();
          dv = p.feature_layers[l].weights.transpose() * dz;
        }
        // l == 0: the zero input contributes no weight gradient.
        grads.feature_layers[l].bias += dz;
      }
    }
  } else {
    Eigen::VectorXd dv = d_feature;
    for (int l = num_layers - 1; l >= 0; --l) {
      Eigen::VectorXd dz = (t.mlp_pre[l].array() > 0.0).select(dv, 0.0);
      if (l == 0) {
        const int k = static_cast<int>(t.flat_input.size());
        if (k > 0) {
          grads.ensure_first_layer_cols(k);
          grads.feature_layers[0].weights.leftCols(k).noalias() +=
              dz * t.flat_input.transpose();
        }
      } else {
        grads.feature_layers[l].weights.noalias() += dz * t.mlp_act[l - 1].transpose();
        dv = p.feature_layers[l].weights.transpose() * dz;
      }
      grads.feature_layers[l].bias += dz;
    }
  }
  return loss;
}

namespace {

void apply_update(ModelParameters& p, const Gradients& g, double scale) {
  if (scale == 0.0) return;
  if (g.first_layer_cols > 0)
    p.feature_layers[0].weights.leftCols(g.first_layer_cols) -=
        scale * g.feature_layers[0].weights.leftCols(g.first_layer_cols);
  p.feature_layers[0].bias -= scale * g.feature_layers[0].bias;
  for (std::size_t i = 1; i < p.feature_layers.size(); ++i) {
    p.feature_layers[i].weights -= scale * g.feature_layers[i].weights;
    p.feature_layers[i].bias -= scale * g.feature_layers[i].bias;
  }
  for (std::size_t i = 0; i < p.classifier.size(); ++i) {
    p.classifier[i].weights -= scale * g.classifier[i].weights;
    p.classifier[i].bias -= scale * g.classifier[i].bias;
  }
}

void scale_gradients(Gradients& g, double factor, const Gradients* add = nullptr) {
  auto scale_layer = [factor](DenseLayer& l) {
    l.weights *= factor;
    l.bias *= factor;
  };
  for (auto& l : g.feature_layers) scale_layer(l);
  for (auto& l : g.classifier) scale_layer(l);
  if (add) g.accumulate(*add);
}

}  // namespace

TrainResult train(ModelParameters params, const std::vector<TrainExample>& data,
                  const TrainConfig& config) {
  if (data.empty()) throw TrainError("empty training dataset");
  if (config.learning_rate < 0 || config.batch_size < 1 || config.epochs < 0)
    throw TrainError("invalid training configuration");

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);

  Gradients velocity(params.arch);
  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.schedule == LrSchedule::kStepDecay && config.step_every > 0)
      lr *= std::pow(config.step_gamma, epoch / config.step_every);

    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Gradients grads(params.arch);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const TrainExample& ex = data[order[i]];
        batch_loss += backward(params, ex.rows,
                               ex.embedding ? &*ex.embedding : nullptr, ex.truth_label, grads);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite loss in epoch " << epoch << ", batch " << start / config.batch_size;
        throw TrainError(msg.str());
      }
      epoch_loss += batch_loss;
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      if (config.momentum > 0.0) {
        // v = momentum * v + mean gradient; step by lr * v
        scale_gradients(grads, inv_batch);
        scale_gradients(velocity, config.momentum, &grads);
        apply_update(params, velocity, lr);
      } else {
        apply_update(params, grads, lr * inv_batch);
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  result.params = std::move(params);
  return result;
}

}  // namespace detcal
