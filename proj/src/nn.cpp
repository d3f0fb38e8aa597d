#include "tim/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tim::nn {

Mat uniform_fan_in(Index rows, Index cols, Index fan_in, Rng& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(const std::string& name, Index in, Index out, Rng& rng)
    : w(name + ".w", uniform_fan_in(in, out, in, rng)),
      b(name + ".b", uniform_fan_in(1, out, in, rng)) {}

Var Linear::forward(Var x, bool row_stable) const {
  Tape& t = *x.tape;
  auto& self = const_cast<Linear&>(*this);
  Var wx = row_stable ? ad::matmul_rows(x, t.param(self.w))
                      : ad::matmul(x, t.param(self.w));
  return ad::add_rowvec(wx, t.param(self.b));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

LayerNorm::LayerNorm(const std::string& name, Index d)
    : gamma(name + ".gamma", Mat::Ones(1, d)),
      beta(name + ".beta", Mat::Zero(1, d)) {}

Var LayerNorm::operator()(Var x) const {
  Tape& t = *x.tape;
  auto& self = const_cast<LayerNorm&>(*this);
  return ad::layer_norm_rows(x, t.param(self.gamma), t.param(self.beta), eps);
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Var dropout(Var x, Real p, bool train, Rng& rng) {
  if (!train || p <= 0.0) return x;
  const Real scale = 1.0 / (1.0 - p);
  Mat mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.rows(); ++i)
    for (Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.uniform() >= p ? scale : 0.0;
  return ad::apply_mask(x, std::move(mask));
}

Var channel_dropout(Var x, Real p, bool train, Rng& rng) {
  if (!train || p <= 0.0) return x;
  const Real scale = 1.0 / (1.0 - p);
  Row channels(x.cols());
  for (Index j = 0; j < channels.size(); ++j)
    channels(j) = rng.uniform() >= p ? scale : 0.0;
  Mat mask = channels.colwise().replicate(x.rows());
  return ad::apply_mask(x, std::move(mask));
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Index dim,
                                       int n_heads, Rng& rng)
    : wq(name + ".wq", dim, dim, rng),
      wk(name + ".wk", dim, dim, rng),
      wv(name + ".wv", dim, dim, rng),
      wo(name + ".wo", dim, dim, rng),
      heads(n_heads) {
  if (dim % n_heads != 0)
    throw std::invalid_argument("attention dim must divide by head count");
}

MultiHeadAttention::Out MultiHeadAttention::forward(
    Var x_feat, Var x_query, Real attn_dropout, bool train, Rng& rng,
    std::vector<Mat>* capture_heads) const {
  const Index n_feat = x_feat.valid() ? x_feat.rows() : 0;
  const Index n_query = x_query.valid() ? x_query.rows() : 0;
  const Index dim = wq.in_dim();
  const Index dh = dim / heads;
  const Real inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Real>(dh));

  Var qf, kf, vf, qq, kq, vq;
  if (n_feat > 0) {
    qf = wq(x_feat);
    kf = wk(x_feat);
    vf = wv(x_feat);
  }
  if (n_query > 0) {
    qq = wq.forward(x_query, true);
    kq = wk.forward(x_query, true);
    vq = wv.forward(x_query, true);
  }

  Var ctx_f, ctx_q;
  for (int h = 0; h < heads; ++h) {
    const Index c0 = h * dh;
    if (n_feat > 0) {
      Var qf_h = ad::slice_cols(qf, c0, dh);
      Var kf_h = ad::slice_cols(kf, c0, dh);
      Var vf_h = ad::slice_cols(vf, c0, dh);
      Var scores = ad::scalar_mul(ad::matmul_nt(qf_h, kf_h), inv_sqrt_dh);
      Var probs = ad::softmax_rows(scores);
      probs = dropout(probs, attn_dropout, train, rng);
      Var c = ad::matmul(probs, vf_h);
      ctx_f = (h == 0) ? c : ad::concat_cols(ctx_f, c);

      if (n_query > 0) {
        Var qq_h = ad::slice_cols(qq, c0, dh);
        Var kq_h = ad::slice_cols(kq, c0, dh);
        Var vq_h = ad::slice_cols(vq, c0, dh);
        Var s_qf = ad::scalar_mul(ad::matmul_nt_rows(qq_h, kf_h), inv_sqrt_dh);
        Var s_self = ad::scalar_mul(ad::rowwise_dot(qq_h, kq_h), inv_sqrt_dh);
        Var s_all = ad::concat_cols(s_qf, s_self);
        Var p_all = ad::softmax_rows(s_all);
        if (capture_heads) capture_heads->push_back(p_all.val());
        p_all = dropout(p_all, attn_dropout, train, rng);
        Var p_feat = ad::slice_cols(p_all, 0, n_feat);
        Var p_self = ad::slice_cols(p_all, n_feat, 1);
        Var cq = ad::add(ad::matmul_rows(p_feat, vf_h),
                         ad::scale_rows(vq_h, p_self));
        ctx_q = (h == 0) ? cq : ad::concat_cols(ctx_q, cq);
      }
    } else if (n_query > 0) {
      // no features: each query attends to itself only
      Var vq_h = ad::slice_cols(vq, c0, dh);
      if (capture_heads) capture_heads->push_back(Mat::Ones(n_query, 1));
      ctx_q = (h == 0) ? vq_h : ad::concat_cols(ctx_q, vq_h);
    }
  }

  Out out;
  if (n_feat > 0) out.features = wo(ctx_f);
  if (n_query > 0) out.queries = wo.forward(ctx_q, true);
  return out;
}

void MultiHeadAttention::collect(std::vector<Parameter*>& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

EncoderBlock::EncoderBlock(const std::string& name, Index dim, int heads,
                           Real p, Rng& rng)
    : ln1(name + ".ln1", dim),
      ln2(name + ".ln2", dim),
      attn(name + ".attn", dim, heads, rng),
      ff1(name + ".ff1", dim, 4 * dim, rng),
      ff2(name + ".ff2", 4 * dim, dim, rng),
      dropout_p(p) {}

EncoderBlock::Out EncoderBlock::forward(Var x_feat, Var x_query, bool train,
                                        Rng& rng,
                                        std::vector<Mat>* capture_heads) const {
  const bool has_f = x_feat.valid() && x_feat.rows() > 0;
  const bool has_q = x_query.valid() && x_query.rows() > 0;

  Var nf, nq;
  if (has_f) nf = ln1(x_feat);
  if (has_q) nq = ln1(x_query);
  auto a = attn.forward(has_f ? nf : Var{}, has_q ? nq : Var{}, dropout_p,
                        train, rng, capture_heads);
  Var f = x_feat, q = x_query;
  if (has_f) f = ad::add(x_feat, dropout(a.features, dropout_p, train, rng));
  if (has_q) q = ad::add(x_query, dropout(a.queries, dropout_p, train, rng));

  if (has_f) {
    Var h = ff2(ad::gelu(ff1(ln2(f))));
    f = ad::add(f, dropout(h, dropout_p, train, rng));
  }
  if (has_q) {
    Var h = ff2.forward(ad::gelu(ff1.forward(ln2(q), true)), true);
    q = ad::add(q, dropout(h, dropout_p, train, rng));
  }
  return Out{f, q};
}

void EncoderBlock::collect(std::vector<Parameter*>& out) {
  ln1.collect(out);
  ln2.collect(out);
  attn.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

}  // namespace tim::nn
