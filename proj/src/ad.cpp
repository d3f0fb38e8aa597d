#include "tim/ad.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "tim/interval.hpp"

namespace tim::ad {

namespace {

constexpr Real kSqrt2 = 1.4142135623730951;
constexpr Real kInvSqrt2Pi = 0.3989422804014327;

Real softplus(Real x) {
  // log(1 + e^x) without overflow
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape)
    throw std::invalid_argument("operands belong to different tapes");
}

}  // namespace

const Mat& Var::val() const { return tape->node(id).value; }

Var Tape::push(Mat value, bool needs_grad,
               std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = needs_grad ? std::move(back) : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Mat value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

Var Tape::param(Parameter& p) {
  Var v = push(p.value, true, nullptr);
  node(v.id).sink = &p;
  return v;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("root not on this tape");
  if (node(root.id).value.size() != 1)
    throw std::invalid_argument("backward root must be 1x1");
  for (auto& n : nodes_)
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  node(root.id).grad(0, 0) = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = node(id);
    if (n.back) n.back(*this, id);
    if (n.sink) n.sink->grad += n.grad;
  }
  ran_backward_ = true;
}

const Mat& Tape::grad_of(Var v) const {
  if (!ran_backward_) throw std::logic_error("backward() has not run");
  return node(v.id).grad;
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Mat v = a.val() * b.val();
  const int pa = a.id, pb = b.id;
  return t.push(std::move(v), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa).noalias() += g * t.node(pb).value.transpose();
    t.grad(pb).noalias() += t.node(pa).value.transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Mat v = a.val() * b.val().transpose();
  const int pa = a.id, pb = b.id;
  return t.push(std::move(v), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa).noalias() += g * t.node(pb).value;
    t.grad(pb).noalias() += g.transpose() * t.node(pa).value;
  });
}

Var matmul_rows(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = a.val();
  const Mat& bv = b.val();
  Mat v(av.rows(), bv.cols());
  for (Index i = 0; i < av.rows(); ++i) {
    const Row lhs = av.row(i);  // contiguous copy, fixed kernel per row
    v.row(i) = lhs * bv;
  }
  const int pa = a.id, pb = b.id;
  return t.push(std::move(v), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa).noalias() += g * t.node(pb).value.transpose();
    t.grad(pb).noalias() += t.node(pa).value.transpose() * g;
  });
}

Var matmul_nt_rows(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = a.val();
  const Mat& bv = b.val();
  Mat v(av.rows(), bv.rows());
  for (Index i = 0; i < av.rows(); ++i) {
    const Vec lhs = av.row(i).transpose();
    v.row(i) = (bv * lhs).transpose();
  }
  const int pa = a.id, pb = b.id;
  return t.push(std::move(v), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa).noalias() += g * t.node(pb).value;
    t.grad(pb).noalias() += g.transpose() * t.node(pa).value;
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const int pa = a.id, pb = b.id;
  return t.push(a.val() + b.val(), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa) += g;
    t.grad(pb) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const int pa = a.id, pb = b.id;
  return t.push(a.val() - b.val(), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa) += g;
    t.grad(pb) -= g;
  });
}

Var cmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const int pa = a.id, pb = b.id;
  return t.push(a.val().cwiseProduct(b.val()), true,
                [pa, pb](Tape& t, int self) {
                  const Mat& g = t.node(self).grad;
                  t.grad(pa) += g.cwiseProduct(t.node(pb).value);
                  t.grad(pb) += g.cwiseProduct(t.node(pa).value);
                });
}

Var add_rowvec(Var a, Var v) {
  check_same_tape(a, v);
  Tape& t = *a.tape;
  Mat out = a.val();
  out.rowwise() += Row(v.val().row(0));
  const int pa = a.id, pv = v.id;
  return t.push(std::move(out), true, [pa, pv](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa) += g;
    t.grad(pv) += g.colwise().sum();
  });
}

Var cmul_rowvec(Var a, Var v) {
  check_same_tape(a, v);
  Tape& t = *a.tape;
  Mat out = (a.val().array().rowwise() * v.val().row(0).array()).matrix();
  const int pa = a.id, pv = v.id;
  return t.push(std::move(out), true, [pa, pv](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& av = t.node(pa).value;
    const Mat& vv = t.node(pv).value;
    t.grad(pa).array() += g.array().rowwise() * vv.row(0).array();
    t.grad(pv) += g.cwiseProduct(av).colwise().sum();
  });
}

Var scale_rows(Var a, Var s) {
  check_same_tape(a, s);
  Tape& t = *a.tape;
  Mat out = (a.val().array().colwise() * s.val().col(0).array()).matrix();
  const int pa = a.id, ps = s.id;
  return t.push(std::move(out), true, [pa, ps](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& av = t.node(pa).value;
    const Mat& sv = t.node(ps).value;
    t.grad(pa).array() += g.array().colwise() * sv.col(0).array();
    t.grad(ps).col(0) += g.cwiseProduct(av).rowwise().sum();
  });
}

Var rowwise_dot(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = a.val();
  const Mat& bv = b.val();
  Mat out(av.rows(), 1);
  for (Index i = 0; i < av.rows(); ++i) {
    Real s = 0.0;  // fixed scalar accumulation order per row
    for (Index j = 0; j < av.cols(); ++j) s += av(i, j) * bv(i, j);
    out(i, 0) = s;
  }
  const int pa = a.id, pb = b.id;
  return t.push(std::move(out), true, [pa, pb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;  // n x 1
    t.grad(pa).array() +=
        t.node(pb).value.array().colwise() * g.col(0).array();
    t.grad(pb).array() +=
        t.node(pa).value.array().colwise() * g.col(0).array();
  });
}

Var scalar_mul(Var a, Real c) {
  Tape& t = *a.tape;
  const int pa = a.id;
  return t.push(a.val() * c, true, [pa, c](Tape& t, int self) {
    t.grad(pa) += t.node(self).grad * c;
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  const int pa = a.id;
  return t.push(a.val().cwiseMax(0.0), true, [pa](Tape& t, int self) {
    const Mat& x = t.node(pa).value;
    t.grad(pa).array() +=
        t.node(self).grad.array() * (x.array() > 0.0).cast<Real>();
  });
}

namespace {
inline Real normal_cdf(Real x) {
  return 0.5 * (1.0 + std::erf(x / kSqrt2));
}
}  // namespace

Var gelu(Var a) {
  Tape& t = *a.tape;
  const Mat& x = a.val();
  Mat out = x.unaryExpr([](Real v) { return v * normal_cdf(v); });
  const int pa = a.id;
  return t.push(std::move(out), true, [pa](Tape& t, int self) {
    const Mat& x = t.node(pa).value;
    Mat dgelu = x.unaryExpr([](Real v) {
      return normal_cdf(v) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    t.grad(pa) += t.node(self).grad.cwiseProduct(dgelu);
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Mat out =
      a.val().unaryExpr([](Real v) { return 1.0 / (1.0 + std::exp(-v)); });
  const int pa = a.id;
  return t.push(std::move(out), true, [pa](Tape& t, int self) {
    const auto y = t.node(self).value.array();
    t.grad(pa).array() += t.node(self).grad.array() * y * (1.0 - y);
  });
}

Var abs(Var a) {
  Tape& t = *a.tape;
  const int pa = a.id;
  return t.push(a.val().cwiseAbs(), true, [pa](Tape& t, int self) {
    const Mat& x = t.node(pa).value;
    t.grad(pa).array() += t.node(self).grad.array() * x.array().sign();
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, Real eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  Tape& t = *x.tape;
  const Mat& xv = x.val();
  const Index d = xv.cols();
  // scalar per-row statistics: identical results for any row count
  Vec inv_std(xv.rows());
  Mat xhat(xv.rows(), d);
  for (Index i = 0; i < xv.rows(); ++i) {
    Real mean = 0.0;
    for (Index j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<Real>(d);
    Real var = 0.0;
    for (Index j = 0; j < d; ++j) {
      const Real c = xv(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    for (Index j = 0; j < d; ++j) xhat(i, j) = (xv(i, j) - mean) * is;
  }
  Mat out = ((xhat.array().rowwise() * gamma.val().row(0).array())
                 .rowwise() +
             beta.val().row(0).array())
                .matrix();
  const int px = x.id, pg = gamma.id, pb = beta.id;
  return t.push(
      std::move(out), true,
      [px, pg, pb, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        const Mat& gam = t.node(pg).value;
        t.grad(pg) += g.cwiseProduct(xhat).colwise().sum();
        t.grad(pb) += g.colwise().sum();
        Mat gh = (g.array().rowwise() * gam.row(0).array()).matrix();
        Vec m1 = gh.rowwise().mean();
        Vec m2 = gh.cwiseProduct(xhat).rowwise().mean();
        Mat dx = gh;
        dx.colwise() -= m1;
        dx -= (xhat.array().colwise() * m2.array()).matrix();
        dx.array().colwise() *= inv_std.array();
        t.grad(px) += dx;
      });
}

namespace {

Mat masked_softmax_value(const Mat& xv, const MatX<bool>* allow) {
  Mat out = Mat::Zero(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    Real m = -std::numeric_limits<Real>::infinity();
    for (Index j = 0; j < xv.cols(); ++j)
      if (!allow || (*allow)(i, j)) m = std::max(m, xv(i, j));
    if (!std::isfinite(m)) continue;  // fully masked row stays zero
    Real denom = 0.0;
    for (Index j = 0; j < xv.cols(); ++j)
      if (!allow || (*allow)(i, j)) {
        out(i, j) = std::exp(xv(i, j) - m);
        denom += out(i, j);
      }
    out.row(i) /= denom;
  }
  return out;
}

Var softmax_impl(Var x, const MatX<bool>* allow) {
  Tape& t = *x.tape;
  Mat out = masked_softmax_value(x.val(), allow);
  const int px = x.id;
  return t.push(std::move(out), true, [px](Tape& t, int self) {
    const Mat& p = t.node(self).value;
    const Mat& g = t.node(self).grad;
    Vec dot = g.cwiseProduct(p).rowwise().sum();
    Mat dx = p.cwiseProduct((g.array().colwise() - dot.array()).matrix());
    t.grad(px) += dx;
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var softmax_rows_masked(Var x, const MatX<bool>& allow) {
  return softmax_impl(x, &allow);
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Mat out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.val();
  out.rightCols(b.cols()) = b.val();
  const int pa = a.id, pb = b.id;
  const Index ca = a.cols(), cb = b.cols();
  return t.push(std::move(out), true, [pa, pb, ca, cb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa) += g.leftCols(ca);
    t.grad(pb) += g.rightCols(cb);
  });
}

Var concat_rows(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.val();
  out.bottomRows(b.rows()) = b.val();
  const int pa = a.id, pb = b.id;
  const Index ra = a.rows(), rb = b.rows();
  return t.push(std::move(out), true, [pa, pb, ra, rb](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.grad(pa) += g.topRows(ra);
    t.grad(pb) += g.bottomRows(rb);
  });
}

Var slice_rows(Var a, Index row0, Index n) {
  Tape& t = *a.tape;
  const int pa = a.id;
  return t.push(a.val().middleRows(row0, n), true,
                [pa, row0, n](Tape& t, int self) {
                  t.grad(pa).middleRows(row0, n) += t.node(self).grad;
                });
}

Var slice_cols(Var a, Index col0, Index n) {
  Tape& t = *a.tape;
  const int pa = a.id;
  return t.push(a.val().middleCols(col0, n), true,
                [pa, col0, n](Tape& t, int self) {
                  t.grad(pa).middleCols(col0, n) += t.node(self).grad;
                });
}

Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape;
  Mat out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.row(static_cast<Index>(k)) = a.val().row(idx[k]);
  const int pa = a.id;
  return t.push(std::move(out), true,
                [pa, idx = std::move(idx)](Tape& t, int self) {
                  const Mat& g = t.node(self).grad;
                  for (std::size_t k = 0; k < idx.size(); ++k)
                    t.grad(pa).row(idx[k]) += g.row(static_cast<Index>(k));
                });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat out(1, 1);
  out(0, 0) = a.val().sum();
  const int pa = a.id;
  return t.push(std::move(out), true, [pa](Tape& t, int self) {
    t.grad(pa).array() += t.node(self).grad(0, 0);
  });
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  const Real n = static_cast<Real>(a.val().size());
  Mat out(1, 1);
  out(0, 0) = a.val().sum() / n;
  const int pa = a.id;
  return t.push(std::move(out), true, [pa, n](Tape& t, int self) {
    t.grad(pa).array() += t.node(self).grad(0, 0) / n;
  });
}

Var rowwise_sum(Var a) {
  Tape& t = *a.tape;
  Mat out = a.val().rowwise().sum();
  const int pa = a.id;
  return t.push(std::move(out), true, [pa](Tape& t, int self) {
    const Mat& g = t.node(self).grad;  // n x 1
    t.grad(pa).array().colwise() += g.col(0).array();
  });
}

Var cross_entropy_rows(Var logits, std::vector<int> targets) {
  Tape& t = *logits.tape;
  const Mat& x = logits.val();
  if (static_cast<Index>(targets.size()) != x.rows())
    throw std::invalid_argument("targets size must match logit rows");
  Mat out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const int c = targets[static_cast<std::size_t>(i)];
    if (c < 0 || c >= x.cols())
      throw std::invalid_argument("target class out of range");
    const Real m = x.row(i).maxCoeff();
    const Real lse = m + std::log((x.row(i).array() - m).exp().sum());
    out(i, 0) = lse - x(i, c);
  }
  const int pl = logits.id;
  return t.push(std::move(out), true,
                [pl, targets = std::move(targets)](Tape& t, int self) {
                  const Mat& x = t.node(pl).value;
                  const Mat& g = t.node(self).grad;  // n x 1
                  for (Index i = 0; i < x.rows(); ++i) {
                    const Real m = x.row(i).maxCoeff();
                    Row p = (x.row(i).array() - m).exp();
                    p /= p.sum();
                    p(targets[static_cast<std::size_t>(i)]) -= 1.0;
                    t.grad(pl).row(i) += g(i, 0) * p;
                  }
                });
}

Var sigmoid_focal_terms(Var logits, Mat targets, Real gamma, Real alpha) {
  Tape& t = *logits.tape;
  const Mat& x = logits.val();
  if (targets.rows() != x.rows() || targets.cols() != x.cols())
    throw std::invalid_argument("focal targets must match logit shape");
  Mat out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) {
      const Real xi = x(i, j);
      const Real p = 1.0 / (1.0 + std::exp(-xi));
      if (targets(i, j) > 0.5) {
        out(i, j) = alpha * std::pow(1.0 - p, gamma) * softplus(-xi);
      } else {
        out(i, j) = (1.0 - alpha) * std::pow(p, gamma) * softplus(xi);
      }
    }
  const int pl = logits.id;
  return t.push(std::move(out), true,
                [pl, targets = std::move(targets), gamma,
                 alpha](Tape& t, int self) {
                  const Mat& x = t.node(pl).value;
                  const Mat& g = t.node(self).grad;
                  Mat dx(x.rows(), x.cols());
                  for (Index i = 0; i < x.rows(); ++i)
                    for (Index j = 0; j < x.cols(); ++j) {
                      const Real xi = x(i, j);
                      const Real p = 1.0 / (1.0 + std::exp(-xi));
                      if (targets(i, j) > 0.5) {
                        const Real logp = -softplus(-xi);
                        dx(i, j) = -alpha * std::pow(1.0 - p, gamma) *
                                   ((1.0 - p) - gamma * p * logp);
                      } else {
                        const Real log1mp = -softplus(xi);
                        dx(i, j) = (1.0 - alpha) * std::pow(p, gamma) *
                                   (p - gamma * (1.0 - p) * log1mp);
                      }
                    }
                  t.grad(pl) += g.cwiseProduct(dx);
                });
}

Var sort2_cols(Var a) {
  Tape& t = *a.tape;
  const Mat& x = a.val();
  if (x.cols() != 2) throw std::invalid_argument("sort2_cols needs 2 columns");
  Mat out(x.rows(), 2);
  std::vector<bool> swapped(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    const bool sw = x(i, 0) > x(i, 1);
    swapped[static_cast<std::size_t>(i)] = sw;
    out(i, 0) = sw ? x(i, 1) : x(i, 0);
    out(i, 1) = sw ? x(i, 0) : x(i, 1);
  }
  const int pa = a.id;
  return t.push(std::move(out), true,
                [pa, swapped = std::move(swapped)](Tape& t, int self) {
                  const Mat& g = t.node(self).grad;
                  Mat& ga = t.grad(pa);
                  for (Index i = 0; i < g.rows(); ++i) {
                    if (swapped[static_cast<std::size_t>(i)]) {
                      ga(i, 1) += g(i, 0);
                      ga(i, 0) += g(i, 1);
                    } else {
                      ga(i, 0) += g(i, 0);
                      ga(i, 1) += g(i, 1);
                    }
                  }
                });
}

Var diou_rows(Var pred, Mat gt) {
  Tape& t = *pred.tape;
  const Mat& p = pred.val();
  if (p.cols() != 2 || gt.cols() != 2 || gt.rows() != p.rows())
    throw std::invalid_argument("diou_rows expects n x 2 pred and gt");
  Mat out(p.rows(), 1);
  for (Index i = 0; i < p.rows(); ++i) {
    const Real s1 = p(i, 0), e1 = p(i, 1);
    const Real s2 = gt(i, 0), e2 = gt(i, 1);
    const Real enclose = std::max(e1, e2) - std::min(s1, s2);
    if (!(enclose > 0.0)) {
      out(i, 0) = 0.0;  // both degenerate and coincident
      continue;
    }
    const Real inter = span_overlap(s1, e1, s2, e2);
    const Real uni = (e1 - s1) + (e2 - s2) - inter;
    const Real iou = uni > 0.0 ? inter / uni : 0.0;
    const Real dc = 0.5 * (s1 + e1) - 0.5 * (s2 + e2);
    out(i, 0) = 1.0 - iou + (dc * dc) / (enclose * enclose);
  }
  const int pp = pred.id;
  return t.push(std::move(out), true,
                [pp, gt = std::move(gt)](Tape& t, int self) {
                  const Mat& p = t.node(pp).value;
                  const Mat& g = t.node(self).grad;  // n x 1
                  Mat& gp = t.grad(pp);
                  for (Index i = 0; i < p.rows(); ++i) {
                    const Real go = g(i, 0);
                    if (go == 0.0) continue;
                    const Real s1 = p(i, 0), e1 = p(i, 1);
                    const Real s2 = gt(i, 0), e2 = gt(i, 1);
                    const Real enclose = std::max(e1, e2) - std::min(s1, s2);
                    if (!(enclose > 0.0)) continue;
                    const Real inter = span_overlap(s1, e1, s2, e2);
                    const Real uni = (e1 - s1) + (e2 - s2) - inter;
                    // d inter / d(s1, e1)
                    Real dI_ds1 = 0.0, dI_de1 = 0.0;
                    if (inter > 0.0) {
                      if (s1 >= s2) dI_ds1 = -1.0;
                      if (e1 <= e2) dI_de1 = 1.0;
                    }
                    const Real dU_ds1 = -1.0 - dI_ds1;
                    const Real dU_de1 = 1.0 - dI_de1;
                    Real dIoU_ds1 = 0.0, dIoU_de1 = 0.0;
                    if (uni > 0.0) {
                      dIoU_ds1 = (dI_ds1 * uni - inter * dU_ds1) / (uni * uni);
                      dIoU_de1 = (dI_de1 * uni - inter * dU_de1) / (uni * uni);
                    }
                    const Real dc = 0.5 * (s1 + e1) - 0.5 * (s2 + e2);
                    const Real dE_ds1 = (s1 <= s2) ? -1.0 : 0.0;
                    const Real dE_de1 = (e1 >= e2) ? 1.0 : 0.0;
                    const Real e2_ = enclose * enclose;
                    const Real dcterm_ds1 =
                        (dc / e2_) - 2.0 * dc * dc / (e2_ * enclose) * dE_ds1;
                    const Real dcterm_de1 =
                        (dc / e2_) - 2.0 * dc * dc / (e2_ * enclose) * dE_de1;
                    gp(i, 0) += go * (-dIoU_ds1 + dcterm_ds1);
                    gp(i, 1) += go * (-dIoU_de1 + dcterm_de1);
                  }
                });
}

Var apply_mask(Var a, Mat mask) {
  Tape& t = *a.tape;
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw std::invalid_argument("mask shape mismatch");
  Mat out = a.val().cwiseProduct(mask);
  const int pa = a.id;
  return t.push(std::move(out), true,
                [pa, mask = std::move(mask)](Tape& t, int self) {
                  t.grad(pa) += t.node(self).grad.cwiseProduct(mask);
                });
}

}  // namespace tim::ad
