#include <cmath>
#include <cstdio>
#include <numbers>

#include "affectgen/error.hpp"
#include "affectgen/model.hpp"
#include "affectgen/random.hpp"

namespace affectgen {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

// LayerNorm over one vector. Returns gain * xhat + bias; stores xhat and
// 1/std for the backward pass.
VectorXd layer_norm(const VectorXd& x, const RowVectorXd& gain, const RowVectorXd& bias, VectorXd& xhat,
                    double& inv_std) {
  const double mean = x.mean();
  const VectorXd centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  xhat = centered * inv_std;
  return xhat.cwiseProduct(gain.transpose()) + bias.transpose();
}

VectorXd layer_norm_backward(const VectorXd& dy, const VectorXd& xhat, double inv_std,
                             const RowVectorXd& gain) {
  const VectorXd dxhat = dy.cwiseProduct(gain.transpose());
  const double n = static_cast<double>(dy.size());
  const double mean_dxhat = dxhat.sum() / n;
  const double mean_dxhat_xhat = dxhat.dot(xhat) / n;
  return inv_std * (dxhat.array() - mean_dxhat - xhat.array() * mean_dxhat_xhat).matrix();
}

// Row-wise LayerNorm for the training path.
MatrixXd layer_norm_rows(const MatrixXd& x, const RowVectorXd& gain, const RowVectorXd& bias, MatrixXd& xhat,
                         VectorXd& inv_std) {
  const Index rows = x.rows();
  const double n = static_cast<double>(x.cols());
  xhat.resize(rows, x.cols());
  inv_std.resize(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const RowVectorXd centered = x.row(r).array() - mean;
    inv_std(r) = 1.0 / std::sqrt(centered.squaredNorm() / n + kLayerNormEps);
    xhat.row(r) = centered * inv_std(r);
  }
  MatrixXd y = xhat.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

MatrixXd layer_norm_rows_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& inv_std,
                                  const RowVectorXd& gain, RowVectorXd& dgain, RowVectorXd& dbias,
                                  double scale) {
  dgain += scale * (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += scale * dy.colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * gain.array();
  const double n = static_cast<double>(dy.cols());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).sum() / n;
    const double mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / n;
    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

void fill_normal(MatrixXd& m, Rng& rng, double stddev) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double max = logits.maxCoeff();
  VectorXd p = (logits.array() - max).exp();
  p /= p.sum();
  return p;
}

Eigen::VectorXd StepOutput::probabilities() const { return softmax(logits); }

void ReferenceLMConfig::validate() const {
  if (layers == 0) throw ConfigError("layers", "must be positive");
  if (heads == 0) throw ConfigError("heads", "must be positive");
  if (embed_dim == 0) throw ConfigError("embed_dim", "must be positive");
  if (embed_dim % heads != 0) throw ConfigError("embed_dim", "must be divisible by heads");
  if (context < 2) throw ConfigError("context", "must be at least 2");
  if (vocab_size < 2) throw ConfigError("vocab_size", "must be at least 2");
}

TransformerWeights TransformerWeights::zeros(const ReferenceLMConfig& config) {
  const auto d = static_cast<Index>(config.embed_dim);
  const auto v = static_cast<Index>(config.vocab_size);
  TransformerWeights w;
  w.token_embedding = MatrixXd::Zero(v, d);
  w.position_embedding = MatrixXd::Zero(static_cast<Index>(config.context), d);
  w.layers.resize(config.layers);
  for (auto& l : w.layers) {
    l.ln1_gain = RowVectorXd::Zero(d);
    l.ln1_bias = RowVectorXd::Zero(d);
    l.w_query = MatrixXd::Zero(d, d);
    l.w_key = MatrixXd::Zero(d, d);
    l.w_value = MatrixXd::Zero(d, d);
    l.w_attn_out = MatrixXd::Zero(d, d);
    l.b_query = RowVectorXd::Zero(d);
    l.b_key = RowVectorXd::Zero(d);
    l.b_value = RowVectorXd::Zero(d);
    l.b_attn_out = RowVectorXd::Zero(d);
    l.ln2_gain = RowVectorXd::Zero(d);
    l.ln2_bias = RowVectorXd::Zero(d);
    l.w_fc = MatrixXd::Zero(d, 4 * d);
    l.b_fc = RowVectorXd::Zero(4 * d);
    l.w_proj = MatrixXd::Zero(4 * d, d);
    l.b_proj = RowVectorXd::Zero(d);
  }
  w.lnf_gain = RowVectorXd::Zero(d);
  w.lnf_bias = RowVectorXd::Zero(d);
  w.w_out = MatrixXd::Zero(d, v);
  w.b_out = RowVectorXd::Zero(v);
  return w;
}

std::size_t TransformerWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

ReferenceModel::ReferenceModel(ReferenceLMConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  config_.vocab_size = vocab_.size();
  config_.validate();
  weights_ = TransformerWeights::zeros(config_);
  Rng rng(config_.seed);
  const double residual_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config_.layers));
  fill_normal(weights_.token_embedding, rng, kInitStd);
  fill_normal(weights_.position_embedding, rng, kInitStd);
  for (auto& l : weights_.layers) {
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    fill_normal(l.w_query, rng, kInitStd);
    fill_normal(l.w_key, rng, kInitStd);
    fill_normal(l.w_value, rng, kInitStd);
    fill_normal(l.w_attn_out, rng, residual_std);
    fill_normal(l.w_fc, rng, kInitStd);
    fill_normal(l.w_proj, rng, residual_std);
  }
  weights_.lnf_gain.setOnes();
  fill_normal(weights_.w_out, rng, kInitStd);
}

ReferenceModel::ReferenceModel(ReferenceLMConfig config, Vocabulary vocab, TransformerWeights weights)
    : config_(config), vocab_(std::move(vocab)), weights_(std::move(weights)) {
  config_.vocab_size = vocab_.size();
  config_.validate();
  const auto d = static_cast<Index>(config_.embed_dim);
  if (weights_.layers.size() != config_.layers || weights_.token_embedding.rows() != static_cast<Index>(config_.vocab_size) ||
      weights_.token_embedding.cols() != d ||
      weights_.position_embedding.rows() != static_cast<Index>(config_.context) ||
      weights_.w_out.cols() != static_cast<Index>(config_.vocab_size)) {
    throw Error("weights do not match the model configuration");
  }
}

HistoryState ReferenceModel::empty_history() const {
  return HistoryState(config_.layers, config_.embed_dim);
}

std::string ReferenceModel::model_id() const {
  // FNV-1a over the raw parameter bytes.
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  weights_.for_each([&](std::string_view, const auto& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
      hash = (hash ^ bytes[i]) * 0x100000001b3ULL;
    }
  });
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return "reference-l" + std::to_string(config_.layers) + "-d" + std::to_string(config_.embed_dim) + "-v" +
         std::to_string(config_.vocab_size) + "-" + std::string(hex, 8);
}

// Intermediate values of one incremental forward pass.
struct ReferenceModel::PositionTrace {
  struct Layer {
    VectorXd xhat1, a, q;
    double inv_std1 = 0.0;
    std::vector<VectorXd> attn;  // per head, one weight per attended position
    VectorXd ctx, xhat2, m, u;
    double inv_std2 = 0.0;
  };
  std::vector<Layer> layers;
  VectorXd xhat_final;
  double inv_std_final = 0.0;
};

StepOutput ReferenceModel::forward_impl(TokenId token, const HistoryState& history, PositionTrace* trace) const {
  if (token >= config_.vocab_size) {
    throw Error("token id " + std::to_string(token) + " >= vocab size " + std::to_string(config_.vocab_size));
  }
  if (history.length() >= config_.context) {
    throw ContextOverflowError("history holds " + std::to_string(history.length()) +
                               " positions, the context limit is " + std::to_string(config_.context) +
                               "; truncate or window the history before calling forward");
  }
  if (history.num_layers() != config_.layers || history.embed_dim() != config_.embed_dim) {
    throw Error("history shape does not match the model");
  }

  const auto pos = static_cast<Index>(history.length());
  const auto d = static_cast<Index>(config_.embed_dim);
  const auto heads = static_cast<Index>(config_.heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (trace) trace->layers.resize(config_.layers);
  std::vector<VectorXd> new_keys(config_.layers), new_values(config_.layers);

  VectorXd x = weights_.token_embedding.row(token).transpose() + weights_.position_embedding.row(pos).transpose();
  for (std::size_t li = 0; li < config_.layers; ++li) {
    const auto& w = weights_.layers[li];
    const auto& past = history.layer(li);
    VectorXd xhat1;
    double inv1 = 0.0;
    const VectorXd a = layer_norm(x, w.ln1_gain, w.ln1_bias, xhat1, inv1);
    const VectorXd q = w.w_query.transpose() * a + w.b_query.transpose();
    VectorXd k = w.w_key.transpose() * a + w.b_key.transpose();
    VectorXd v = w.w_value.transpose() * a + w.b_value.transpose();

    VectorXd ctx = VectorXd::Zero(d);
    std::vector<VectorXd> attn(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      VectorXd scores(pos + 1);
      for (Index j = 0; j < pos; ++j) scores(j) = past.keys.row(j).segment(off, dh).dot(q.segment(off, dh)) * scale;
      scores(pos) = k.segment(off, dh).dot(q.segment(off, dh)) * scale;
      VectorXd p = softmax(scores);
      for (Index j = 0; j < pos; ++j) ctx.segment(off, dh) += p(j) * past.values.row(j).segment(off, dh).transpose();
      ctx.segment(off, dh) += p(pos) * v.segment(off, dh);
      attn[static_cast<std::size_t>(h)] = std::move(p);
    }
    const VectorXd x_mid = x + w.w_attn_out.transpose() * ctx + w.b_attn_out.transpose();

    VectorXd xhat2;
    double inv2 = 0.0;
    const VectorXd m = layer_norm(x_mid, w.ln2_gain, w.ln2_bias, xhat2, inv2);
    const VectorXd u = w.w_fc.transpose() * m + w.b_fc.transpose();
    const VectorXd g = u.unaryExpr([](double z) { return gelu(z); });
    x = x_mid + w.w_proj.transpose() * g + w.b_proj.transpose();

    if (trace) {
      auto& t = trace->layers[li];
      t.xhat1 = std::move(xhat1);
      t.inv_std1 = inv1;
      t.a = a;
      t.q = q;
      t.attn = std::move(attn);
      t.ctx = std::move(ctx);
      t.xhat2 = std::move(xhat2);
      t.inv_std2 = inv2;
      t.m = m;
      t.u = u;
    }
    new_keys[li] = std::move(k);
    new_values[li] = std::move(v);
  }

  VectorXd xhat_f;
  double inv_f = 0.0;
  StepOutput out;
  out.output_embedding = layer_norm(x, weights_.lnf_gain, weights_.lnf_bias, xhat_f, inv_f);
  out.logits = weights_.w_out.transpose() * out.output_embedding + weights_.b_out.transpose();
  out.next_history = history;
  out.next_history.push_position(new_keys, new_values);
  if (trace) {
    trace->xhat_final = std::move(xhat_f);
    trace->inv_std_final = inv_f;
  }
  return out;
}

StepOutput ReferenceModel::forward(TokenId token, const HistoryState& history) const {
  return forward_impl(token, history, nullptr);
}

LossGradient ReferenceModel::loss_gradient(const HistoryState& history, const HistoryState& perturbation,
                                           TokenId token, const ProbabilityLoss& loss) const {
  if (!history.same_shape(perturbation)) throw Error("perturbation shape differs from history shape");
  const HistoryState perturbed = history + perturbation;

  PositionTrace trace;
  LossGradient result;
  result.output = forward_impl(token, perturbed, &trace);
  result.probs = softmax(result.output.logits);

  VectorXd dprobs = VectorXd::Zero(result.probs.size());
  result.loss = loss(result.probs, dprobs);
  if (!std::isfinite(result.loss)) throw NonFiniteError("loss");
  if (!dprobs.allFinite()) throw NonFiniteError("loss gradient");

  // Softmax Jacobian: dlogit_i = p_i * (g_i - sum_j p_j g_j).
  const VectorXd dlogits = result.probs.cwiseProduct((dprobs.array() - result.probs.dot(dprobs)).matrix());
  VectorXd dx = layer_norm_backward(weights_.w_out * dlogits, trace.xhat_final, trace.inv_std_final,
                                    weights_.lnf_gain);

  const auto pos = static_cast<Index>(perturbed.length());
  const auto d = static_cast<Index>(config_.embed_dim);
  const auto heads = static_cast<Index>(config_.heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  result.gradient = perturbation.zeros_like();

  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& w = weights_.layers[li];
    const auto& t = trace.layers[li];
    const auto& past = perturbed.layer(li);
    const auto& cur = result.output.next_history.layer(li);  // row `pos` holds this position's k, v
    auto& grad = result.gradient.layer(li);

    // MLP block.
    VectorXd dx_mid = dx;
    const VectorXd du = (w.w_proj * dx).cwiseProduct(t.u.unaryExpr([](double z) { return gelu_grad(z); }));
    dx_mid += layer_norm_backward(w.w_fc * du, t.xhat2, t.inv_std2, w.ln2_gain);

    // Attention block.
    const VectorXd dctx = w.w_attn_out * dx_mid;
    VectorXd dq = VectorXd::Zero(d), dk = VectorXd::Zero(d), dv = VectorXd::Zero(d);
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      const VectorXd& p = t.attn[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.segment(off, dh);
      VectorXd dp(pos + 1);
      for (Index j = 0; j < pos; ++j) dp(j) = past.values.row(j).segment(off, dh).dot(dctx_h);
      dp(pos) = cur.values.row(pos).segment(off, dh).dot(dctx_h);
      const VectorXd ds = p.cwiseProduct((dp.array() - p.dot(dp)).matrix()) * scale;
      const auto q_h = t.q.segment(off, dh);
      for (Index j = 0; j < pos; ++j) {
        grad.values.row(j).segment(off, dh) += p(j) * dctx_h.transpose();
        grad.keys.row(j).segment(off, dh) += ds(j) * q_h.transpose();
        dq.segment(off, dh) += ds(j) * past.keys.row(j).segment(off, dh).transpose();
      }
      dv.segment(off, dh) += p(pos) * dctx_h;
      dk.segment(off, dh) += ds(pos) * q_h;
      dq.segment(off, dh) += ds(pos) * cur.keys.row(pos).segment(off, dh).transpose();
    }
    const VectorXd da = w.w_query * dq + w.w_key * dk + w.w_value * dv;
    dx = dx_mid + layer_norm_backward(da, t.xhat1, t.inv_std1, w.ln1_gain);
  }

  if (!result.gradient.all_finite()) throw NonFiniteError("gradient");
  return result;
}

namespace {

struct SequenceLayerCache {
  MatrixXd x_in, xhat1, a, q, k, v, ctx, x_mid, xhat2, m, u, g;
  VectorXd inv1, inv2;
  std::vector<MatrixXd> attn;  // per head, T x T lower triangular
};

struct SequenceCache {
  std::vector<SequenceLayerCache> layers;
  MatrixXd x_final, xhat_final, f;
  VectorXd inv_final;
};

MatrixXd add_row(MatrixXd m, const RowVectorXd& b) {
  m.rowwise() += b;
  return m;
}

MatrixXd sequence_forward(const ReferenceLMConfig& config, const TransformerWeights& weights,
                          std::span<const TokenId> tokens, SequenceCache& cache) {
  const auto T = static_cast<Index>(tokens.size());
  const auto d = static_cast<Index>(config.embed_dim);
  const auto heads = static_cast<Index>(config.heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd x(T, d);
  for (Index t = 0; t < T; ++t) {
    const auto tok = tokens[static_cast<std::size_t>(t)];
    if (tok >= config.vocab_size) throw Error("token id out of range");
    x.row(t) = weights.token_embedding.row(tok) + weights.position_embedding.row(t);
  }

  cache.layers.resize(config.layers);
  for (std::size_t li = 0; li < config.layers; ++li) {
    const auto& w = weights.layers[li];
    auto& c = cache.layers[li];
    c.x_in = x;
    c.a = layer_norm_rows(x, w.ln1_gain, w.ln1_bias, c.xhat1, c.inv1);
    c.q = add_row(c.a * w.w_query, w.b_query);
    c.k = add_row(c.a * w.w_key, w.b_key);
    c.v = add_row(c.a * w.w_value, w.b_value);
    c.ctx = MatrixXd::Zero(T, d);
    c.attn.assign(static_cast<std::size_t>(heads), MatrixXd());
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      MatrixXd s = (c.q.middleCols(off, dh) * c.k.middleCols(off, dh).transpose()) * scale;
      MatrixXd p = MatrixXd::Zero(T, T);
      for (Index r = 0; r < T; ++r) {
        const double mx = s.row(r).head(r + 1).maxCoeff();
        double sum = 0.0;
        for (Index j = 0; j <= r; ++j) {
          p(r, j) = std::exp(s(r, j) - mx);
          sum += p(r, j);
        }
        p.row(r).head(r + 1) /= sum;
      }
      c.ctx.middleCols(off, dh) = p * c.v.middleCols(off, dh);
      c.attn[static_cast<std::size_t>(h)] = std::move(p);
    }
    c.x_mid = x + add_row(c.ctx * w.w_attn_out, w.b_attn_out);
    c.m = layer_norm_rows(c.x_mid, w.ln2_gain, w.ln2_bias, c.xhat2, c.inv2);
    c.u = add_row(c.m * w.w_fc, w.b_fc);
    c.g = c.u.unaryExpr([](double z) { return gelu(z); });
    x = c.x_mid + add_row(c.g * w.w_proj, w.b_proj);
  }
  cache.x_final = x;
  cache.f = layer_norm_rows(x, weights.lnf_gain, weights.lnf_bias, cache.xhat_final, cache.inv_final);
  return add_row(cache.f * weights.w_out, weights.b_out);
}

}  // namespace

Eigen::MatrixXd ReferenceModel::sequence_logits(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("empty token sequence");
  if (tokens.size() > config_.context) throw ContextOverflowError("sequence longer than the context");
  SequenceCache cache;
  return sequence_forward(config_, weights_, tokens, cache);
}

double ReferenceModel::accumulate_sequence_gradient(std::span<const TokenId> inputs,
                                                    std::span<const TokenId> targets, TransformerWeights& grads,
                                                    double scale) const {
  if (inputs.size() != targets.size() || inputs.empty()) throw Error("inputs and targets must be non-empty and equal length");
  if (inputs.size() > config_.context) throw ContextOverflowError("sequence longer than the context");

  SequenceCache cache;
  const MatrixXd logits = sequence_forward(config_, weights_, inputs, cache);
  const auto T = static_cast<Index>(inputs.size());
  const auto d = static_cast<Index>(config_.embed_dim);
  const auto heads = static_cast<Index>(config_.heads);
  const Index dh = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Cross-entropy and its gradient (already multiplied by `scale`).
  double loss = 0.0;
  MatrixXd dlogits(T, logits.cols());
  for (Index t = 0; t < T; ++t) {
    const VectorXd p = softmax(logits.row(t).transpose());
    const auto target = static_cast<Index>(targets[static_cast<std::size_t>(t)]);
    loss -= std::log(std::max(p(target), 1e-300));
    dlogits.row(t) = p.transpose();
    dlogits(t, target) -= 1.0;
  }
  loss /= static_cast<double>(T);
  dlogits *= scale / static_cast<double>(T);

  grads.w_out.noalias() += cache.f.transpose() * dlogits;
  grads.b_out += dlogits.colwise().sum();
  MatrixXd dx = layer_norm_rows_backward(dlogits * weights_.w_out.transpose(), cache.xhat_final, cache.inv_final,
                                         weights_.lnf_gain, grads.lnf_gain, grads.lnf_bias, 1.0);

  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& w = weights_.layers[li];
    auto& gw = grads.layers[li];
    const auto& c = cache.layers[li];

    // MLP block.
    gw.w_proj.noalias() += c.g.transpose() * dx;
    gw.b_proj += dx.colwise().sum();
    const MatrixXd du = (dx * w.w_proj.transpose()).cwiseProduct(c.u.unaryExpr([](double z) { return gelu_grad(z); }));
    gw.w_fc.noalias() += c.m.transpose() * du;
    gw.b_fc += du.colwise().sum();
    MatrixXd dx_mid = dx + layer_norm_rows_backward(du * w.w_fc.transpose(), c.xhat2, c.inv2, w.ln2_gain,
                                                    gw.ln2_gain, gw.ln2_bias, 1.0);

    // Attention block.
    gw.w_attn_out.noalias() += c.ctx.transpose() * dx_mid;
    gw.b_attn_out += dx_mid.colwise().sum();
    const MatrixXd dctx = dx_mid * w.w_attn_out.transpose();
    MatrixXd dq(T, d), dk(T, d), dv(T, d);
    for (Index h = 0; h < heads; ++h) {
      const Index off = h * dh;
      const MatrixXd& p = c.attn[static_cast<std::size_t>(h)];
      const MatrixXd dp = dctx.middleCols(off, dh) * c.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh) = p.transpose() * dctx.middleCols(off, dh);
      MatrixXd ds = MatrixXd::Zero(T, T);
      for (Index r = 0; r < T; ++r) {
        const double dot = p.row(r).head(r + 1).dot(dp.row(r).head(r + 1));
        for (Index j = 0; j <= r; ++j) ds(r, j) = p(r, j) * (dp(r, j) - dot) * attn_scale;
      }
      dq.middleCols(off, dh) = ds * c.k.middleCols(off, dh);
      dk.middleCols(off, dh) = ds.transpose() * c.q.middleCols(off, dh);
    }
    gw.w_query.noalias() += c.a.transpose() * dq;
    gw.w_key.noalias() += c.a.transpose() * dk;
    gw.w_value.noalias() += c.a.transpose() * dv;
    gw.b_query += dq.colwise().sum();
    gw.b_key += dk.colwise().sum();
    gw.b_value += dv.colwise().sum();
    const MatrixXd da = dq * w.w_query.transpose() + dk * w.w_key.transpose() + dv * w.w_value.transpose();
    dx = dx_mid + layer_norm_rows_backward(da, c.xhat1, c.inv1, w.ln1_gain, gw.ln1_gain, gw.ln1_bias, 1.0);
  }

  for (Index t = 0; t < T; ++t) {
    grads.token_embedding.row(inputs[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.position_embedding.row(t) += dx.row(t);
  }
  return loss;
}

}  // namespace affectgen
