#include "tabforge/lm/model.hpp"

#include <cmath>

#include "tabforge/error.hpp"
#include "tabforge/lm/loss.hpp"
#include "tabforge/random.hpp"

namespace tabforge::lm {

namespace {

template <typename Scalar>
void rms_norm(const Matrix<Scalar>& x, const Scalar* gain, double eps, Matrix<Scalar>& out,
              std::vector<Scalar>& inv_rms) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index d = x.cols();
  out.resize(rows, d);
  inv_rms.resize(static_cast<std::size_t>(rows));
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> g(gain, d);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double ms = static_cast<double>(x.row(t).squaredNorm()) / static_cast<double>(d);
    const auto r = static_cast<Scalar>(1.0 / std::sqrt(ms + eps));
    inv_rms[static_cast<std::size_t>(t)] = r;
    out.row(t) = (x.row(t) * r).cwiseProduct(g);
  }
}

// dx += r * (dn - n * mean(dn * n)), dn = dy * g; d_gain += sum_t dy * n.
template <typename Scalar>
void rms_norm_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& x, const Scalar* gain,
                       const std::vector<Scalar>& inv_rms, Matrix<Scalar>& dx, Scalar* d_gain) {
  const Eigen::Index d = x.cols();
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> g(gain, d);
  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> dg(d_gain, d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Scalar r = inv_rms[static_cast<std::size_t>(t)];
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> n = x.row(t) * r;
    dg += dy.row(t).cwiseProduct(n);
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dn = dy.row(t).cwiseProduct(g);
    const Scalar mean_dn_n = dn.dot(n) / static_cast<Scalar>(d);
    dx.row(t) += r * (dn - n * mean_dn_n);
  }
}

}  // namespace

template <typename Scalar>
Transformer<Scalar>::Transformer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const auto f = static_cast<std::size_t>(config_.hidden_ffn_dim());

  embed_ = add_tensor("tok_embeddings", v, d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerIndex li{};
    li.attn_norm = add_tensor(p + "attention_norm", 1, d);
    li.wq = add_tensor(p + "attention.wq", d, d);
    li.wk = add_tensor(p + "attention.wk", d, d);
    li.wv = add_tensor(p + "attention.wv", d, d);
    li.wo = add_tensor(p + "attention.wo", d, d);
    li.ffn_norm = add_tensor(p + "ffn_norm", 1, d);
    li.w_gate = add_tensor(p + "feed_forward.w_gate", d, f);
    li.w_up = add_tensor(p + "feed_forward.w_up", d, f);
    li.w_down = add_tensor(p + "feed_forward.w_down", f, d);
    layers_.push_back(li);
  }
  final_norm_ = add_tensor("norm", 1, d);
  output_ = add_tensor("output", d, v);

  params_.assign(tensors_.back().offset + tensors_.back().size(), Scalar(0));
  grads_.assign(params_.size(), Scalar(0));

  Rng rng(seed);
  const double residual_scale = 1.0 / std::sqrt(2.0 * config_.n_layers);
  for (const auto& t : tensors_) {
    const bool is_norm = t.rows == 1;
    const bool is_residual_out = t.name.ends_with("wo") || t.name.ends_with("w_down");
    const double std_dev = config_.init_std * (is_residual_out ? residual_scale : 1.0);
    for (std::size_t i = 0; i < t.size(); ++i)
      params_[t.offset + i] = is_norm ? Scalar(1) : static_cast<Scalar>(std_dev * rng.normal());
  }
  rope_ = RopeTable(static_cast<std::size_t>(config_.context_len), static_cast<std::size_t>(config_.d_head),
                    config_.rope_base);
}

template <typename Scalar>
std::size_t Transformer<Scalar>::add_tensor(const std::string& name, std::size_t rows, std::size_t cols) {
  const std::size_t offset = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back({name, rows, cols, offset});
  return tensors_.size() - 1;
}

template <typename Scalar>
const TensorInfo& Transformer<Scalar>::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw DomainError("no tensor named '" + name + "'");
}

template <typename Scalar>
void Transformer<Scalar>::zero_grad() {
  std::fill(grads_.begin(), grads_.end(), Scalar(0));
}

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> Transformer<Scalar>::view(std::size_t i) const {
  const auto& t = tensors_[i];
  return {params_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

template <typename Scalar>
Eigen::Map<Matrix<Scalar>> Transformer<Scalar>::grad_view(std::size_t i) {
  const auto& t = tensors_[i];
  return {grads_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

template <typename Scalar>
auto Transformer<Scalar>::hidden_states(std::span<const int> ids, Cache* cache) const -> Mat {
  const auto T = static_cast<Eigen::Index>(ids.size());
  if (T == 0) throw DomainError("empty token sequence");
  if (T > config_.context_len)
    throw DomainError("sequence of " + std::to_string(T) + " tokens exceeds context_len " +
                      std::to_string(config_.context_len));
  const Eigen::Index d = config_.d_model;
  const Eigen::Index dh = config_.d_head;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat x(T, d);
  const auto emb = view(embed_);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= config_.vocab_size) throw DomainError("token id " + std::to_string(id) + " out of range");
    x.row(t) = emb.row(id);
  }
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.resize(layers_.size());
  }
  LayerCache scratch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerIndex& li = layers_[l];
    LayerCache& lc = cache ? cache->layers[l] : scratch;
    lc.x_in = x;
    rms_norm(x, params_.data() + tensors_[li.attn_norm].offset, config_.norm_eps, lc.xn1, lc.inv_rms1);
    lc.q.noalias() = lc.xn1 * view(li.wq);
    lc.k.noalias() = lc.xn1 * view(li.wk);
    lc.v.noalias() = lc.xn1 * view(li.wv);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int h = 0; h < config_.n_heads; ++h) {
        rope_.apply(lc.q.data() + t * d + h * dh, static_cast<std::size_t>(t));
        rope_.apply(lc.k.data() + t * d + h * dh, static_cast<std::size_t>(t));
      }
    }
    lc.attn_cat.resize(T, d);
    lc.probs.resize(static_cast<std::size_t>(config_.n_heads));
    for (int h = 0; h < config_.n_heads; ++h) {
      Mat& p = lc.probs[static_cast<std::size_t>(h)];
      p.noalias() = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        Scalar max_s = p(i, 0) * scale;
        for (Eigen::Index j = 1; j <= i; ++j) max_s = std::max(max_s, p(i, j) * scale);
        Scalar sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) * scale - max_s);
          sum += p(i, j);
        }
        const Scalar inv = Scalar(1) / sum;
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) *= inv;
        for (Eigen::Index j = i + 1; j < T; ++j) p(i, j) = 0;
      }
      lc.attn_cat.middleCols(h * dh, dh).noalias() = p * lc.v.middleCols(h * dh, dh);
    }
    lc.h = x;
    lc.h.noalias() += lc.attn_cat * view(li.wo);
    rms_norm(lc.h, params_.data() + tensors_[li.ffn_norm].offset, config_.norm_eps, lc.xn2, lc.inv_rms2);
    lc.gate.noalias() = lc.xn2 * view(li.w_gate);
    lc.up.noalias() = lc.xn2 * view(li.w_up);
    lc.act = (lc.gate.array() / (Scalar(1) + (-lc.gate.array()).exp())) * lc.up.array();
    x = lc.h;
    x.noalias() += lc.act * view(li.w_down);
  }
  Mat out;
  std::vector<Scalar> inv_rms;
  rms_norm(x, params_.data() + tensors_[final_norm_].offset, config_.norm_eps, out, inv_rms);
  if (cache) {
    cache->x_final = std::move(x);
    cache->inv_rms_final = std::move(inv_rms);
  }
  return out;
}

template <typename Scalar>
auto Transformer<Scalar>::forward(std::span<const int> ids) const -> Mat {
  Mat hidden = hidden_states(ids);
  Mat logits;
  logits.noalias() = hidden * view(output_);
  return logits;
}

template <typename Scalar>
auto Transformer<Scalar>::project(const Mat& hidden, std::span<const std::size_t> positions) const -> Mat {
  Mat rows(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(positions[i]));
  Mat logits;
  logits.noalias() = rows * view(output_);
  return logits;
}

template <typename Scalar>
void Transformer<Scalar>::backward_project(const Mat& hidden, std::span<const std::size_t> positions,
                                           const Mat& d_logits, Mat& d_hidden) {
  Mat rows(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(positions[i]));
  grad_view(output_).noalias() += rows.transpose() * d_logits;
  const Mat d_rows = d_logits * view(output_).transpose();
  for (std::size_t i = 0; i < positions.size(); ++i)
    d_hidden.row(static_cast<Eigen::Index>(positions[i])) += d_rows.row(static_cast<Eigen::Index>(i));
}

template <typename Scalar>
void Transformer<Scalar>::backward(const Cache& cache, const Mat& d_hidden) {
  const auto T = static_cast<Eigen::Index>(cache.ids.size());
  const Eigen::Index d = config_.d_model;
  const Eigen::Index dh = config_.d_head;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat dx = Mat::Zero(T, d);
  rms_norm_backward(d_hidden, cache.x_final, params_.data() + tensors_[final_norm_].offset, cache.inv_rms_final, dx,
                    grads_.data() + tensors_[final_norm_].offset);

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerIndex& li = layers_[l];
    const LayerCache& lc = cache.layers[l];

    // Feed-forward block.
    grad_view(li.w_down).noalias() += lc.act.transpose() * dx;
    const Mat d_act = dx * view(li.w_down).transpose();
    const auto sig = (Scalar(1) / (Scalar(1) + (-lc.gate.array()).exp())).eval();
    const Mat d_up = (d_act.array() * lc.gate.array() * sig).matrix();
    const Mat d_gate =
        (d_act.array() * lc.up.array() * sig * (Scalar(1) + lc.gate.array() * (Scalar(1) - sig))).matrix();
    grad_view(li.w_gate).noalias() += lc.xn2.transpose() * d_gate;
    grad_view(li.w_up).noalias() += lc.xn2.transpose() * d_up;
    Mat d_xn2 = d_gate * view(li.w_gate).transpose();
    d_xn2.noalias() += d_up * view(li.w_up).transpose();
    Mat dh_res = dx;
    rms_norm_backward(d_xn2, lc.h, params_.data() + tensors_[li.ffn_norm].offset, lc.inv_rms2, dh_res,
                      grads_.data() + tensors_[li.ffn_norm].offset);

    // Attention block.
    grad_view(li.wo).noalias() += lc.attn_cat.transpose() * dh_res;
    const Mat d_cat = dh_res * view(li.wo).transpose();
    Mat dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < config_.n_heads; ++h) {
      const Mat& p = lc.probs[static_cast<std::size_t>(h)];
      const auto d_out = d_cat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_out;
      Mat d_p = d_out * lc.v.middleCols(h * dh, dh).transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar row_dot = d_p.row(i).dot(p.row(i));
        d_p.row(i) = (p.row(i).array() * (d_p.row(i).array() - row_dot)).matrix() * scale;
      }
      dq.middleCols(h * dh, dh).noalias() = d_p * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = d_p.transpose() * lc.q.middleCols(h * dh, dh);
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int h = 0; h < config_.n_heads; ++h) {
        rope_.apply(dq.data() + t * d + h * dh, static_cast<std::size_t>(t), true);
        rope_.apply(dk.data() + t * d + h * dh, static_cast<std::size_t>(t), true);
      }
    }
    grad_view(li.wq).noalias() += lc.xn1.transpose() * dq;
    grad_view(li.wk).noalias() += lc.xn1.transpose() * dk;
    grad_view(li.wv).noalias() += lc.xn1.transpose() * dv;
    Mat d_xn1 = dq * view(li.wq).transpose();
    d_xn1.noalias() += dk * view(li.wk).transpose();
    d_xn1.noalias() += dv * view(li.wv).transpose();
    dx = dh_res;
    rms_norm_backward(d_xn1, lc.x_in, params_.data() + tensors_[li.attn_norm].offset, lc.inv_rms1, dx,
                      grads_.data() + tensors_[li.attn_norm].offset);
  }

  auto d_emb = grad_view(embed_);
  for (Eigen::Index t = 0; t < T; ++t) d_emb.row(cache.ids[static_cast<std::size_t>(t)]) += dx.row(t);
}

template <typename Scalar>
double Transformer<Scalar>::accumulate_lm_gradients(std::span<const int> ids, std::span<const std::uint8_t> loss_mask,
                                                    double weight) {
  if (loss_mask.size() != ids.size()) throw DomainError("loss mask length differs from sequence length");
  std::vector<std::size_t> positions;
  std::vector<int> targets;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    if (!loss_mask[t]) continue;
    positions.push_back(t);
    targets.push_back(ids[t + 1]);
  }
  if (positions.empty()) throw DomainError("empty loss mask");
  Cache cache;
  const Mat hidden = hidden_states(ids, &cache);
  const Mat logits = project(hidden, positions);
  const std::vector<std::uint8_t> all(positions.size(), 1);
  auto result = lm_loss<Scalar>(logits, targets, all);
  result.d_logits *= static_cast<Scalar>(weight);
  Mat d_hidden = Mat::Zero(hidden.rows(), hidden.cols());
  backward_project(hidden, positions, result.d_logits, d_hidden);
  backward(cache, d_hidden);
  return result.loss;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace tabforge::lm
