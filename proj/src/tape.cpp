// Copyright 2026 The easkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "easkit/tape.hpp"

#include <cmath>
#include <memory>

namespace easkit {

template <typename Scalar>
Matrix<Scalar> pooled_means(const Matrix<Scalar>& x, int seq_len, PoolingRule rule) {
  if (seq_len <= 0 || x.rows() % seq_len != 0) {
    throw ShapeError("pooled_means: " + shape_of(x) + " is not a stack of length-" +
                     std::to_string(seq_len) + " sequences");
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  RowVector<Scalar> running(x.cols());
  for (Eigen::Index base = 0; base < x.rows(); base += seq_len) {
    // prefix[j] = sum of rows 0..j of this segment
    Matrix<Scalar> prefix(seq_len, x.cols());
    running.setZero();
    for (int j = 0; j < seq_len; ++j) {
      running += x.row(base + j);
      prefix.row(j) = running;
    }
    for (int t = 0; t < seq_len; ++t) {
      const int last = rule.last_row(t, seq_len);
      out.row(base + t) = prefix.row(last) / Scalar(last + 1);
    }
  }
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::push(Mat value, bool needs_grad, std::function<void()> backward) -> Var {
  nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(backward)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
template <typename Expr>
void GradTape<Scalar>::accumulate(Var v, const Expr& delta) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

template <typename Scalar>
auto GradTape<Scalar>::grad(Var v) const -> Mat {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Scalar>
auto GradTape<Scalar>::constant(Mat value) -> Var {
  return push(std::move(value), false);
}

template <typename Scalar>
auto GradTape<Scalar>::parameter(const std::string& name, Mat value) -> Var {
  if (params_.contains(name)) throw ContractError("GradTape: duplicate parameter " + name);
  Var v = push(std::move(value), true);
  params_.emplace(name, v);
  return v;
}

template <typename Scalar>
auto GradTape<Scalar>::matmul(Var a, Var b) -> Var {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_of(av) + " * " + shape_of(bv));
  }
  Var out = push(av * bv, needs(a) || needs(b));
  nodes_.back().backward = [this, a, b, out] {
    const Mat& go = g(out.id);
    if (needs(a)) accumulate(a, go * value(b).transpose());
    if (needs(b)) accumulate(b, value(a).transpose() * go);
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::affine(Var x, Var w, Var b) -> Var {
  return add_row(matmul(x, w), b);
}

template <typename Scalar>
auto GradTape<Scalar>::add(Var a, Var b) -> Var {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ShapeError("add: " + shape_of(av) + " + " + shape_of(bv));
  }
  Var out = push(av + bv, needs(a) || needs(b));
  nodes_.back().backward = [this, a, b, out] {
    accumulate(a, g(out.id));
    accumulate(b, g(out.id));
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::add_row(Var a, Var row) -> Var {
  const Mat& av = value(a);
  const Mat& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_of(av) + " + row " + shape_of(rv));
  }
  Mat y = av;
  y.rowwise() += rv.row(0);
  Var out = push(std::move(y), needs(a) || needs(row));
  nodes_.back().backward = [this, a, row, out] {
    accumulate(a, g(out.id));
    if (needs(row)) accumulate(row, g(out.id).colwise().sum());
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::scale(Var a, Scalar s) -> Var {
  Var out = push(value(a) * s, needs(a));
  nodes_.back().backward = [this, a, s, out] { accumulate(a, g(out.id) * s); };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::gelu(Var a) -> Var {
  Var out = push(easkit::gelu<Scalar>(value(a)), needs(a));
  nodes_.back().backward = [this, a, out] {
    const Mat d = value(a).unaryExpr([](Scalar v) { return gelu_derivative<Scalar>(v); });
    accumulate(a, g(out.id).cwiseProduct(d));
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::layer_norm_rows(Var x, Var gamma, Var beta, Scalar eps) -> Var {
  const Mat& xv = value(x);
  const Mat& gv = value(gamma);
  const Mat& bv = value(beta);
  const Eigen::Index d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
    throw ShapeError("layer_norm_rows: x " + shape_of(xv) + " gamma " + shape_of(gv) +
                     " beta " + shape_of(bv));
  }
  auto xhat = std::make_shared<Mat>(xv.rows(), d);
  auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(xv.rows());
  Mat y(xv.rows(), d);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Scalar mean = xv.row(i).mean();
    const RowVector<Scalar> c = xv.row(i).array() - mean;
    const Scalar inv = Scalar(1) / std::sqrt(c.squaredNorm() / Scalar(d) + eps);
    (*inv_std)(i) = inv;
    xhat->row(i) = c * inv;
    y.row(i) = xhat->row(i).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  Var out = push(std::move(y), needs(x) || needs(gamma) || needs(beta));
  nodes_.back().backward = [this, x, gamma, beta, out, xhat, inv_std, d] {
    const Mat& go = g(out.id);
    if (needs(gamma)) accumulate(gamma, go.cwiseProduct(*xhat).colwise().sum());
    if (needs(beta)) accumulate(beta, go.colwise().sum());
    if (needs(x)) {
      const RowVector<Scalar> gam = value(gamma).row(0);
      Mat dx(go.rows(), d);
      for (Eigen::Index i = 0; i < go.rows(); ++i) {
        const RowVector<Scalar> dxhat = go.row(i).cwiseProduct(gam);
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
        dx.row(i) = (*inv_std)(i) * (dxhat.array() - m1 - xhat->row(i).array() * m2).matrix();
      }
      accumulate(x, dx);
    }
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::causal_attention(Var q, Var k, Var v, int seq_len, int n_heads) -> Var {
  const Mat& qv = value(q);
  const Mat& kv = value(k);
  const Mat& vv = value(v);
  if (qv.rows() != kv.rows() || qv.rows() != vv.rows() || qv.cols() != kv.cols() ||
      qv.cols() != vv.cols()) {
    throw ShapeError("causal_attention: q " + shape_of(qv) + " k " + shape_of(kv) + " v " +
                     shape_of(vv));
  }
  if (seq_len <= 0 || qv.rows() % seq_len != 0 || n_heads <= 0 || qv.cols() % n_heads != 0) {
    throw ShapeError("causal_attention: bad seq_len/heads for " + shape_of(qv));
  }
  const Eigen::Index d = qv.cols();
  const Eigen::Index dh = d / n_heads;
  const Eigen::Index batches = qv.rows() / seq_len;
  const Scalar sc = Scalar(1) / std::sqrt(Scalar(dh));
  // probs[b * n_heads + h] is the seq_len x seq_len attention matrix.
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(static_cast<size_t>(batches * n_heads));
  Mat y(qv.rows(), d);
  for (Eigen::Index b = 0; b < batches; ++b) {
    for (Eigen::Index h = 0; h < n_heads; ++h) {
      const auto qh = qv.block(b * seq_len, h * dh, seq_len, dh);
      const auto kh = kv.block(b * seq_len, h * dh, seq_len, dh);
      const auto vh = vv.block(b * seq_len, h * dh, seq_len, dh);
      Mat s = (qh * kh.transpose()) * sc;
      for (int i = 0; i < seq_len; ++i) {
        const Scalar mx = s.row(i).head(i + 1).maxCoeff();
        Scalar z = 0;
        for (int j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        }
        s.row(i).head(i + 1) /= z;
        s.row(i).tail(seq_len - i - 1).setZero();
      }
      y.block(b * seq_len, h * dh, seq_len, dh) = s * vh;
      probs->push_back(std::move(s));
    }
  }
  Var out = push(std::move(y), needs(q) || needs(k) || needs(v));
  nodes_.back().backward = [this, q, k, v, out, probs, seq_len, n_heads, batches, dh, sc] {
    const Mat& go = g(out.id);
    const Mat& qv2 = value(q);
    const Mat& kv2 = value(k);
    const Mat& vv2 = value(v);
    Mat dq = Mat::Zero(qv2.rows(), qv2.cols());
    Mat dk = Mat::Zero(qv2.rows(), qv2.cols());
    Mat dv = Mat::Zero(qv2.rows(), qv2.cols());
    for (Eigen::Index b = 0; b < batches; ++b) {
      for (Eigen::Index h = 0; h < n_heads; ++h) {
        const Mat& p = (*probs)[static_cast<size_t>(b * n_heads + h)];
        const auto gh = go.block(b * seq_len, h * dh, seq_len, dh);
        const auto qh = qv2.block(b * seq_len, h * dh, seq_len, dh);
        const auto kh = kv2.block(b * seq_len, h * dh, seq_len, dh);
        const auto vh = vv2.block(b * seq_len, h * dh, seq_len, dh);
        dv.block(b * seq_len, h * dh, seq_len, dh) = p.transpose() * gh;
        const Mat dp = gh * vh.transpose();
        Mat ds = p.cwiseProduct(dp);
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
        ds -= p.cwiseProduct(rowdot.replicate(1, seq_len));
        ds *= sc;
        dq.block(b * seq_len, h * dh, seq_len, dh) = ds * kh;
        dk.block(b * seq_len, h * dh, seq_len, dh) = ds.transpose() * qh;
      }
    }
    accumulate(q, dq);
    accumulate(k, dk);
    accumulate(v, dv);
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::gather_rows(Var table, std::vector<int> ids) -> Var {
  const Mat& tv = value(table);
  Mat y(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(ids[i]) + " outside table " +
                       shape_of(tv));
    }
    y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  Var out = push(std::move(y), needs(table));
  nodes_.back().backward = [this, table, out, ids = std::move(ids)] {
    const Mat& go = g(out.id);
    Mat dt = Mat::Zero(value(table).rows(), value(table).cols());
    for (size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += go.row(static_cast<Eigen::Index>(i));
    accumulate(table, dt);
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::pooled_mean(Var x, int seq_len, PoolingRule rule) -> Var {
  Var out = push(pooled_means<Scalar>(value(x), seq_len, rule), needs(x));
  nodes_.back().backward = [this, x, out, seq_len, rule] {
    const Mat& go = g(out.id);
    Mat dx = Mat::Zero(go.rows(), go.cols());
    for (Eigen::Index base = 0; base < go.rows(); base += seq_len) {
      // Every output row t spreads g_t / (last+1) over input rows 0..last.
      RowVector<Scalar> carry = RowVector<Scalar>::Zero(go.cols());
      std::vector<RowVector<Scalar>> at_last(static_cast<size_t>(seq_len),
                                             RowVector<Scalar>::Zero(go.cols()));
      for (int t = 0; t < seq_len; ++t) {
        const int last = rule.last_row(t, seq_len);
        at_last[static_cast<size_t>(last)] += go.row(base + t) / Scalar(last + 1);
      }
      for (int j = seq_len - 1; j >= 0; --j) {
        carry += at_last[static_cast<size_t>(j)];
        dx.row(base + j) = carry;
      }
    }
    accumulate(x, dx);
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::softmax_rows(Var x, Scalar tau) -> Var {
  if (!(tau > Scalar(0))) throw DomainError("softmax_rows: temperature must be positive");
  const Mat& xv = value(x);
  Mat y(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    y.row(i) = softmax_temp<Scalar>(xv.row(i), tau);
  }
  Var out = push(std::move(y), needs(x));
  nodes_.back().backward = [this, x, out, tau] {
    const Mat& go = g(out.id);
    const Mat& p = value(out);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = go.cwiseProduct(p).rowwise().sum();
    Mat dx = p.cwiseProduct(go - dot.replicate(1, go.cols())) / tau;
    accumulate(x, dx);
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::scale_rows_by(Var a, Var weights, int col) -> Var {
  const Mat& av = value(a);
  const Mat& wv = value(weights);
  if (wv.rows() != av.rows() || col < 0 || col >= wv.cols()) {
    throw ShapeError("scale_rows_by: a " + shape_of(av) + " weights " + shape_of(wv) +
                     " col " + std::to_string(col));
  }
  Mat y = av.array().colwise() * wv.col(col).array();
  Var out = push(std::move(y), needs(a) || needs(weights));
  nodes_.back().backward = [this, a, weights, col, out] {
    const Mat& go = g(out.id);
    if (needs(a)) {
      Mat da = go.array().colwise() * value(weights).col(col).array();
      accumulate(a, da);
    }
    if (needs(weights)) {
      Mat dw = Mat::Zero(value(weights).rows(), value(weights).cols());
      dw.col(col) = go.cwiseProduct(value(a)).rowwise().sum();
      accumulate(weights, dw);
    }
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::cross_entropy(Var logits, std::vector<int> targets) -> Var {
  const Mat& lv = value(logits);
  Mat loss(1, 1);
  loss(0, 0) = cross_entropy_loss<Scalar>(lv, targets);
  Var out = push(std::move(loss), needs(logits));
  nodes_.back().backward = [this, logits, out, targets = std::move(targets)] {
    const Mat& lv2 = value(logits);
    const Scalar go = g(out.id)(0, 0);
    Mat d(lv2.rows(), lv2.cols());
    for (Eigen::Index i = 0; i < lv2.rows(); ++i) {
      d.row(i) = softmax_temp<Scalar>(lv2.row(i), Scalar(1));
      d(i, targets[static_cast<size_t>(i)]) -= Scalar(1);
    }
    accumulate(logits, d * (go / Scalar(lv2.rows())));
  };
  return out;
}

template <typename Scalar>
auto GradTape<Scalar>::square_sum(Var a) -> Var {
  Mat s(1, 1);
  s(0, 0) = value(a).squaredNorm();
  Var out = push(std::move(s), needs(a));
  nodes_.back().backward = [this, a, out] {
    accumulate(a, value(a) * (Scalar(2) * g(out.id)(0, 0)));
  };
  return out;
}

template <typename Scalar>
void GradTape<Scalar>::backward(Var loss) {
  const Mat& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_of(lv));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[static_cast<size_t>(loss.id)].needs_grad) return;
  nodes_[static_cast<size_t>(loss.id)].grad = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

template Matrix<float> pooled_means<float>(const Matrix<float>&, int, PoolingRule);
template Matrix<double> pooled_means<double>(const Matrix<double>&, int, PoolingRule);
template class GradTape<float>;
template class GradTape<double>;

}  // namespace easkit
