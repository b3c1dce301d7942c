#include "vlhsa/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vlhsa::nn {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

Map m(Tensor& t) { return Map(t.data.data(), t.rows(), t.cols()); }
CMap cm(const Tensor& t) { return CMap(t.data.data(), t.rows(), t.cols()); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": rank-2 tensor expected, got " + t.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

}  // namespace

Var Tape::push(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, nullptr});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) {
  require_rank2(t, "constant");
  return push(std::move(t));
}

Var Tape::param(const Tensor& value, Tensor* grad_sink) {
  require_rank2(value, "param");
  if (grad_sink && !grad_sink->same_shape(value))
    throw std::invalid_argument("param: grad sink shape mismatch");
  Var v = push(value);
  node(v).sink = grad_sink;
  const int32_t i = v.idx;
  node(v).back = [i](Tape& tp) {
    if (tp.nodes_[i].sink) m(*tp.nodes_[i].sink) += cm(tp.nodes_[i].grad);
  };
  return v;
}

double Tape::scalar(Var v) const {
  const Tensor& t = val(v);
  if (t.numel() != 1) throw std::invalid_argument("scalar: tensor has " + t.shape_str());
  return t.data[0];
}

Var Tape::matmul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  require_rank2(ta, "matmul");
  require_rank2(tb, "matmul");
  if (ta.cols() != tb.rows()) shape_error("matmul", ta, tb);
  Tensor out({ta.rows(), tb.cols()});
  m(out).noalias() = cm(ta) * cm(tb);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx, bi = b.idx;
  node(o).back = [oi, ai, bi](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    m(tp.gref(ai)).noalias() += cm(go) * cm(tp.nodes_[bi].value).transpose();
    m(tp.gref(bi)).noalias() += cm(tp.nodes_[ai].value).transpose() * cm(go);
  };
  return o;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  require_rank2(ta, "matmul_nt");
  require_rank2(tb, "matmul_nt");
  if (ta.cols() != tb.cols()) shape_error("matmul_nt", ta, tb);
  Tensor out({ta.rows(), tb.rows()});
  m(out).noalias() = cm(ta) * cm(tb).transpose();
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx, bi = b.idx;
  node(o).back = [oi, ai, bi](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    m(tp.gref(ai)).noalias() += cm(go) * cm(tp.nodes_[bi].value);
    m(tp.gref(bi)).noalias() += cm(go).transpose() * cm(tp.nodes_[ai].value);
  };
  return o;
}

Var Tape::add(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  if (!ta.same_shape(tb)) shape_error("add", ta, tb);
  Tensor out = ta;
  m(out) += cm(tb);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx, bi = b.idx;
  node(o).back = [oi, ai, bi](Tape& tp) {
    m(tp.gref(ai)) += cm(tp.nodes_[oi].grad);
    m(tp.gref(bi)) += cm(tp.nodes_[oi].grad);
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  if (!ta.same_shape(tb)) shape_error("sub", ta, tb);
  Tensor out = ta;
  m(out) -= cm(tb);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx, bi = b.idx;
  node(o).back = [oi, ai, bi](Tape& tp) {
    m(tp.gref(ai)) += cm(tp.nodes_[oi].grad);
    m(tp.gref(bi)) -= cm(tp.nodes_[oi].grad);
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor &ta = val(a), &tb = val(b);
  if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
  Tensor out = ta;
  m(out).array() *= cm(tb).array();
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx, bi = b.idx;
  node(o).back = [oi, ai, bi](Tape& tp) {
    m(tp.gref(ai)).array() += cm(tp.nodes_[oi].grad).array() * cm(tp.nodes_[bi].value).array();
    m(tp.gref(bi)).array() += cm(tp.nodes_[oi].grad).array() * cm(tp.nodes_[ai].value).array();
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  Tensor out = val(a);
  m(out) *= s;
  Var o = push(std::move(out));
  const int32_t oi = o.idx, ai = a.idx;
  node(o).back = [oi, ai, s](Tape& tp) { m(tp.gref(ai)) += s * cm(tp.nodes_[oi].grad); };
  return o;
}

Var Tape::add_rowvec(Var x, Var b) {
  const Tensor &tx = val(x), &tb = val(b);
  require_rank2(tx, "add_rowvec");
  if (tb.rows() != 1 || tb.cols() != tx.cols()) shape_error("add_rowvec", tx, tb);
  Tensor out = tx;
  m(out).rowwise() += cm(tb).row(0);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx, bi = b.idx;
  node(o).back = [oi, xi, bi](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    m(tp.gref(xi)) += cm(go);
    m(tp.gref(bi)).row(0) += cm(go).colwise().sum();
  };
  return o;
}

Var Tape::mul_rowvec(Var x, Var g) {
  const Tensor &tx = val(x), &tg = val(g);
  require_rank2(tx, "mul_rowvec");
  if (tg.rows() != 1 || tg.cols() != tx.cols()) shape_error("mul_rowvec", tx, tg);
  Tensor out = tx;
  m(out).array().rowwise() *= cm(tg).array().row(0);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx, gi = g.idx;
  node(o).back = [oi, xi, gi](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    m(tp.gref(xi)).array() += cm(go).array().rowwise() * cm(tp.nodes_[gi].value).array().row(0);
    m(tp.gref(gi)).row(0) +=
        (cm(go).array() * cm(tp.nodes_[xi].value).array()).colwise().sum().matrix();
  };
  return o;
}

Var Tape::sub_colvec(Var x, Var c) {
  const Tensor &tx = val(x), &tc = val(c);
  require_rank2(tx, "sub_colvec");
  if (tc.cols() != 1 || tc.rows() != tx.rows()) shape_error("sub_colvec", tx, tc);
  Tensor out = tx;
  m(out).colwise() -= cm(tc).col(0);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx, ci = c.idx;
  node(o).back = [oi, xi, ci](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    m(tp.gref(xi)) += cm(go);
    m(tp.gref(ci)).col(0) -= cm(go).rowwise().sum();
  };
  return o;
}

Var Tape::div_colvec(Var x, Var c) {
  const Tensor &tx = val(x), &tc = val(c);
  require_rank2(tx, "div_colvec");
  if (tc.cols() != 1 || tc.rows() != tx.rows()) shape_error("div_colvec", tx, tc);
  Tensor out = tx;
  m(out).array().colwise() /= cm(tc).array().col(0);
  Var o = push(out);  // keep copy for backward via node value
  const int32_t oi = o.idx, xi = x.idx, ci = c.idx;
  node(o).back = [oi, xi, ci](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    const Tensor& tcv = tp.nodes_[ci].value;
    const Tensor& ov = tp.nodes_[oi].value;
    m(tp.gref(xi)).array() += cm(go).array().colwise() / cm(tcv).array().col(0);
    m(tp.gref(ci)).col(0) -= ((cm(go).array() * cm(ov).array()).rowwise().sum() /
                              cm(tcv).array().col(0))
                                 .matrix();
  };
  return o;
}

Var Tape::sigmoid(Var x) {
  Tensor out = val(x);
  for (double& v : out.data) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& y = tp.nodes_[oi].value;
    Tensor& gx = tp.gref(xi);
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t k = 0; k < gx.data.size(); ++k)
      gx.data[k] += go.data[k] * y.data[k] * (1.0 - y.data[k]);
  };
  return o;
}

Var Tape::gelu(Var x) {
  static const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Tensor out = val(x);
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& xv = tp.nodes_[xi].value;
    Tensor& gx = tp.gref(xi);
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t k = 0; k < gx.data.size(); ++k) {
      const double v = xv.data[k];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx.data[k] += go.data[k] * (cdf + v * pdf);
    }
  };
  return o;
}

Var Tape::softplus(Var x) {
  Tensor out = val(x);
  for (double& v : out.data) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& xv = tp.nodes_[xi].value;
    Tensor& gx = tp.gref(xi);
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t k = 0; k < gx.data.size(); ++k) {
      const double v = xv.data[k];
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gx.data[k] += go.data[k] * s;
    }
  };
  return o;
}

Var Tape::log_plus(Var x, double eps) {
  Tensor out = val(x);
  for (double& v : out.data) v = std::log(v + eps);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, eps](Tape& tp) {
    const Tensor& xv = tp.nodes_[xi].value;
    Tensor& gx = tp.gref(xi);
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += go.data[k] / (xv.data[k] + eps);
  };
  return o;
}

Var Tape::sqrt_plus(Var x, double eps) {
  Tensor out = val(x);
  for (double& v : out.data) v = std::sqrt(v + eps);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& y = tp.nodes_[oi].value;
    Tensor& gx = tp.gref(xi);
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += go.data[k] * 0.5 / y.data[k];
  };
  return o;
}

Var Tape::softmax_rows(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "softmax_rows");
  Tensor out = tx;
  const int64_t n = tx.rows(), d = tx.cols();
  for (int64_t i = 0; i < n; ++i) {
    double mx = out.at(i, 0);
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, out.at(i, j));
    double s = 0;
    for (int64_t j = 0; j < d; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (int64_t j = 0; j < d; ++j) out.at(i, j) /= s;
  }
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& y = tp.nodes_[oi].value;
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    const int64_t rn = y.rows(), rd = y.cols();
    for (int64_t i = 0; i < rn; ++i) {
      double dot = 0;
      for (int64_t j = 0; j < rd; ++j) dot += go.at(i, j) * y.at(i, j);
      for (int64_t j = 0; j < rd; ++j) gx.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
    }
  };
  return o;
}

Var Tape::log_softmax_rows(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "log_softmax_rows");
  Tensor out = tx;
  const int64_t n = tx.rows(), d = tx.cols();
  for (int64_t i = 0; i < n; ++i) {
    double mx = out.at(i, 0);
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, out.at(i, j));
    double s = 0;
    for (int64_t j = 0; j < d; ++j) s += std::exp(out.at(i, j) - mx);
    const double lse = mx + std::log(s);
    for (int64_t j = 0; j < d; ++j) out.at(i, j) -= lse;
  }
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& y = tp.nodes_[oi].value;
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    const int64_t rn = y.rows(), rd = y.cols();
    for (int64_t i = 0; i < rn; ++i) {
      double gsum = 0;
      for (int64_t j = 0; j < rd; ++j) gsum += go.at(i, j);
      for (int64_t j = 0; j < rd; ++j) gx.at(i, j) += go.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
  };
  return o;
}

Var Tape::row_max(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "row_max");
  if (tx.cols() < 1) throw std::invalid_argument("row_max: empty rows");
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor out({n, 1});
  std::vector<int64_t> amax(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    double mx = tx.at(i, 0);
    int64_t arg = 0;
    for (int64_t j = 1; j < d; ++j)
      if (tx.at(i, j) > mx) {
        mx = tx.at(i, j);
        arg = j;
      }
    out.at(i, 0) = mx;
    amax[static_cast<size_t>(i)] = arg;
  }
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, amax = std::move(amax)](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    for (int64_t i = 0; i < go.rows(); ++i)
      gx.at(i, amax[static_cast<size_t>(i)]) += go.at(i, 0);
  };
  return o;
}

Var Tape::mean_over_rows(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "mean_over_rows");
  if (tx.rows() < 1) throw std::invalid_argument("mean_over_rows: empty");
  const double inv = 1.0 / static_cast<double>(tx.rows());
  Tensor out({1, tx.cols()});
  m(out).row(0) = cm(tx).colwise().mean();
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, inv](Tape& tp) {
    m(tp.gref(xi)).rowwise() += inv * cm(tp.nodes_[oi].grad).row(0);
  };
  return o;
}

Var Tape::mean_over_cols(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "mean_over_cols");
  if (tx.cols() < 1) throw std::invalid_argument("mean_over_cols: empty");
  const double inv = 1.0 / static_cast<double>(tx.cols());
  Tensor out({tx.rows(), 1});
  m(out).col(0) = cm(tx).rowwise().mean();
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, inv](Tape& tp) {
    m(tp.gref(xi)).colwise() += inv * cm(tp.nodes_[oi].grad).col(0);
  };
  return o;
}

Var Tape::sum_all(Var x) {
  const Tensor& tx = val(x);
  Tensor out({1, 1});
  out.data[0] = cm(tx).sum();
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    m(tp.gref(xi)).array() += tp.nodes_[oi].grad.data[0];
  };
  return o;
}

Var Tape::cumavg_rows(Var x) {
  const Tensor& tx = val(x);
  require_rank2(tx, "cumavg_rows");
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor out({n, d});
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      acc[static_cast<size_t>(j)] += tx.at(i, j);
      out.at(i, j) = acc[static_cast<size_t>(j)] / static_cast<double>(i + 1);
    }
  }
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    const int64_t rn = go.rows(), rd = go.cols();
    std::vector<double> suffix(static_cast<size_t>(rd), 0.0);
    for (int64_t i = rn - 1; i >= 0; --i) {
      const double inv = 1.0 / static_cast<double>(i + 1);
      for (int64_t j = 0; j < rd; ++j) {
        suffix[static_cast<size_t>(j)] += go.at(i, j) * inv;
        gx.at(i, j) += suffix[static_cast<size_t>(j)];
      }
    }
  };
  return o;
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t n = val(xs[0]).rows();
  int64_t total = 0;
  for (Var v : xs) {
    require_rank2(val(v), "concat_cols");
    if (val(v).rows() != n) shape_error("concat_cols", val(xs[0]), val(v));
    total += val(v).cols();
  }
  Tensor out({n, total});
  int64_t off = 0;
  for (Var v : xs) {
    const Tensor& t = val(v);
    m(out).middleCols(off, t.cols()) = cm(t);
    off += t.cols();
  }
  Var o = push(std::move(out));
  std::vector<int32_t> srcs;
  for (Var v : xs) srcs.push_back(v.idx);
  const int32_t oi = o.idx;
  node(o).back = [oi, srcs = std::move(srcs)](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    int64_t off2 = 0;
    for (int32_t si : srcs) {
      const int64_t c = tp.nodes_[si].value.cols();
      m(tp.gref(si)) += cm(go).middleCols(off2, c);
      off2 += c;
    }
  };
  return o;
}

Var Tape::slice_cols(Var x, int64_t c0, int64_t c1) {
  const Tensor& tx = val(x);
  require_rank2(tx, "slice_cols");
  if (c0 < 0 || c1 > tx.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  Tensor out({tx.rows(), c1 - c0});
  m(out) = cm(tx).middleCols(c0, c1 - c0);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, c0, c1](Tape& tp) {
    m(tp.gref(xi)).middleCols(c0, c1 - c0) += cm(tp.nodes_[oi].grad);
  };
  return o;
}

Var Tape::slice_rows(Var x, int64_t r0, int64_t r1) {
  const Tensor& tx = val(x);
  require_rank2(tx, "slice_rows");
  if (r0 < 0 || r1 > tx.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  Tensor out({r1 - r0, tx.cols()});
  m(out) = cm(tx).middleRows(r0, r1 - r0);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, r0, r1](Tape& tp) {
    m(tp.gref(xi)).middleRows(r0, r1 - r0) += cm(tp.nodes_[oi].grad);
  };
  return o;
}

Var Tape::gather_rows(Var x, std::vector<int64_t> ids) {
  const Tensor& tx = val(x);
  require_rank2(tx, "gather_rows");
  for (int64_t id : ids)
    if (id < 0 || id >= tx.rows()) throw std::invalid_argument("gather_rows: index out of range");
  Tensor out({static_cast<int64_t>(ids.size()), tx.cols()});
  for (size_t t = 0; t < ids.size(); ++t)
    m(out).row(static_cast<int64_t>(t)) = cm(tx).row(ids[t]);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, ids = std::move(ids)](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    for (size_t t = 0; t < ids.size(); ++t)
      m(tp.gref(xi)).row(ids[t]) += cm(go).row(static_cast<int64_t>(t));
  };
  return o;
}

Var Tape::gather_elems(Var x, std::vector<std::pair<int64_t, int64_t>> ij) {
  const Tensor& tx = val(x);
  require_rank2(tx, "gather_elems");
  for (auto [i, j] : ij)
    if (i < 0 || i >= tx.rows() || j < 0 || j >= tx.cols())
      throw std::invalid_argument("gather_elems: index out of range");
  Tensor out({static_cast<int64_t>(ij.size()), 1});
  for (size_t t = 0; t < ij.size(); ++t) out.at(static_cast<int64_t>(t), 0) = tx.at(ij[t].first, ij[t].second);
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, ij = std::move(ij)](Tape& tp) {
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    for (size_t t = 0; t < ij.size(); ++t)
      gx.at(ij[t].first, ij[t].second) += go.at(static_cast<int64_t>(t), 0);
  };
  return o;
}

Var Tape::normalize_rows(Var x, double eps) {
  const Tensor& tx = val(x);
  require_rank2(tx, "normalize_rows");
  if (eps <= 0) throw std::invalid_argument("normalize_rows: eps must be positive");
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor out({n, d});
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < d; ++j) s += tx.at(i, j) * tx.at(i, j);
    const double nm = std::max(std::sqrt(s), eps);
    norms[static_cast<size_t>(i)] = nm;
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = tx.at(i, j) / nm;
  }
  Var o = push(std::move(out));
  const int32_t oi = o.idx, xi = x.idx;
  node(o).back = [oi, xi, eps, norms = std::move(norms)](Tape& tp) {
    const Tensor& y = tp.nodes_[oi].value;
    const Tensor& go = tp.nodes_[oi].grad;
    Tensor& gx = tp.gref(xi);
    const int64_t rn = y.rows(), rd = y.cols();
    for (int64_t i = 0; i < rn; ++i) {
      const double nm = norms[static_cast<size_t>(i)];
      if (nm > eps) {
        double dot = 0;
        for (int64_t j = 0; j < rd; ++j) dot += go.at(i, j) * y.at(i, j);
        for (int64_t j = 0; j < rd; ++j) gx.at(i, j) += (go.at(i, j) - y.at(i, j) * dot) / nm;
      } else {
        for (int64_t j = 0; j < rd; ++j) gx.at(i, j) += go.at(i, j) / eps;
      }
    }
  };
  return o;
}

void Tape::backward(Var scalar_out) {
  if (!scalar_out.valid() || static_cast<size_t>(scalar_out.idx) >= nodes_.size())
    throw std::invalid_argument("backward: invalid var");
  if (val(scalar_out).numel() != 1)
    throw std::invalid_argument("backward: output must be scalar, got " + val(scalar_out).shape_str());
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  nodes_[scalar_out.idx].grad.data[0] = 1.0;
  for (int64_t i = scalar_out.idx; i >= 0; --i)
    if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back(*this);
}

}  // namespace vlhsa::nn
