#include "bilat/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace bilat {

namespace {

std::shared_ptr<TensorNode> make_node(Matrix value,
                                      std::vector<std::shared_ptr<TensorNode>> parents) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  return n;
}

void ensure_grad(TensorNode* n) {
  if (!n->has_grad) {
    n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    n->has_grad = true;
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  return Tensor(n);
}

Tensor Tensor::leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

void Tensor::backward() const {
  if (!node_) throw std::logic_error("backward() on empty tensor");
  if (node_->value.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar node");
  }
  // iterative post-order topological sort over the grad-requiring subgraph
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx++].get();
      if (!visited.count(p) && p->requires_grad) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad = Matrix::Ones(1, 1);
  node_->has_grad = true;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && n->has_grad && n->requires_grad) n->backward();
  }
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.value() + b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pb = b.node().get();
    n->backward = [self, pa, pb] {
      if (pa->requires_grad) pa->accumulate(self->grad);
      if (pb->requires_grad) pb->accumulate(self->grad);
    };
  }
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.value() - b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pb = b.node().get();
    n->backward = [self, pa, pb] {
      if (pa->requires_grad) pa->accumulate(self->grad);
      if (pb->requires_grad) pb->accumulate(-self->grad);
    };
  }
  return Tensor(n);
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_rowwise: bias must be [1, cols]");
  }
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  auto n = make_node(std::move(v), {a.node(), row.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pr = row.node().get();
    n->backward = [self, pa, pr] {
      if (pa->requires_grad) pa->accumulate(self->grad);
      if (pr->requires_grad) pr->accumulate(self->grad.colwise().sum());
    };
  }
  return Tensor(n);
}

Tensor add_colwise(const Tensor& a, const Tensor& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("add_colwise: bias must be [rows, 1]");
  }
  Matrix v = a.value();
  v.colwise() += col.value().col(0);
  auto n = make_node(std::move(v), {a.node(), col.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pc = col.node().get();
    n->backward = [self, pa, pc] {
      if (pa->requires_grad) pa->accumulate(self->grad);
      if (pc->requires_grad) pc->accumulate(self->grad.rowwise().sum());
    };
  }
  return Tensor(n);
}

Tensor scale(const Tensor& a, double s) {
  auto n = make_node(a.value() * s, {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa, s] {
      if (pa->requires_grad) pa->accumulate(s * self->grad);
    };
  }
  return Tensor(n);
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  auto n = make_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pb = b.node().get();
    n->backward = [self, pa, pb] {
      if (pa->requires_grad) pa->accumulate(self->grad.cwiseProduct(pb->value));
      if (pb->requires_grad) pb->accumulate(self->grad.cwiseProduct(pa->value));
    };
  }
  return Tensor(n);
}

Tensor exp(const Tensor& a) {
  auto n = make_node(a.value().array().exp().matrix(), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa] {
      if (pa->requires_grad) pa->accumulate(self->grad.cwiseProduct(self->value));
    };
  }
  return Tensor(n);
}

Tensor relu(const Tensor& a) {
  auto n = make_node(a.value().cwiseMax(0.0), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa] {
      if (!pa->requires_grad) return;
      const Matrix m = (pa->value.array() > 0.0).cast<double>().matrix();
      pa->accumulate(self->grad.cwiseProduct(m));
    };
  }
  return Tensor(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  }
  auto n = make_node(a.value() * b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    TensorNode* pb = b.node().get();
    n->backward = [self, pa, pb] {
      if (pa->requires_grad) {
        ensure_grad(pa);
        pa->grad.noalias() += self->grad * pb->value.transpose();
      }
      if (pb->requires_grad) {
        ensure_grad(pb);
        pb->grad.noalias() += pa->value.transpose() * self->grad;
      }
    };
  }
  return Tensor(n);
}

Tensor transpose(const Tensor& a) {
  auto n = make_node(a.value().transpose(), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa] {
      if (pa->requires_grad) pa->accumulate(self->grad.transpose());
    };
  }
  return Tensor(n);
}

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n_rows) {
  if (r0 < 0 || r0 + n_rows > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  auto n = make_node(a.value().middleRows(r0, n_rows), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa, r0, n_rows] {
      if (!pa->requires_grad) return;
      ensure_grad(pa);
      pa->grad.middleRows(r0, n_rows) += self->grad;
    };
  }
  return Tensor(n);
}

Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n_cols) {
  if (c0 < 0 || c0 + n_cols > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  auto n = make_node(a.value().middleCols(c0, n_cols), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa, c0, n_cols] {
      if (!pa->requires_grad) return;
      ensure_grad(pa);
      pa->grad.middleCols(c0, n_cols) += self->grad;
    };
  }
  return Tensor(n);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    parents.push_back(p.node());
  }
  auto n = make_node(std::move(v), std::move(parents));
  if (n->requires_grad) {
    TensorNode* self = n.get();
    std::vector<TensorNode*> ps;
    std::vector<Eigen::Index> offs, sizes;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      ps.push_back(p.node().get());
      offs.push_back(off);
      sizes.push_back(p.rows());
      off += p.rows();
    }
    n->backward = [self, ps, offs, sizes] {
      for (size_t i = 0; i < ps.size(); ++i) {
        if (ps[i]->requires_grad) {
          ps[i]->accumulate(self->grad.middleRows(offs[i], sizes[i]));
        }
      }
    };
  }
  return Tensor(n);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    parents.push_back(p.node());
  }
  auto n = make_node(std::move(v), std::move(parents));
  if (n->requires_grad) {
    TensorNode* self = n.get();
    std::vector<TensorNode*> ps;
    std::vector<Eigen::Index> offs, sizes;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      ps.push_back(p.node().get());
      offs.push_back(off);
      sizes.push_back(p.cols());
      off += p.cols();
    }
    n->backward = [self, ps, offs, sizes] {
      for (size_t i = 0; i < ps.size(); ++i) {
        if (ps[i]->requires_grad) {
          ps[i]->accumulate(self->grad.middleCols(offs[i], sizes[i]));
        }
      }
    };
  }
  return Tensor(n);
}

Tensor sum_all(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  auto n = make_node(std::move(v), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa] {
      if (!pa->requires_grad) return;
      ensure_grad(pa);
      pa->grad.array() += self->grad(0, 0);
    };
  }
  return Tensor(n);
}

Tensor softmax_rows(const Tensor& a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  auto n = make_node(std::move(v), {a.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pa = a.node().get();
    n->backward = [self, pa] {
      if (!pa->requires_grad) return;
      const Matrix& y = self->value;
      const Matrix& dy = self->grad;
      Matrix dx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = dy.row(r).dot(y.row(r));
        dx.row(r) = y.row(r).cwiseProduct(dy.row(r)) - dot * y.row(r);
      }
      pa->accumulate(dx);
    };
  }
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols()) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [1, cols]");
  }
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), xv.cols());
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xv.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Matrix v(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    v.row(r) = xhat.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  auto n = make_node(std::move(v), {x.node(), gamma.node(), beta.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* px = x.node().get();
    TensorNode* pg = gamma.node().get();
    TensorNode* pb = beta.node().get();
    n->backward = [self, px, pg, pb, xhat, inv_std] {
      const Matrix& dy = self->grad;
      if (pg->requires_grad) pg->accumulate(dy.cwiseProduct(xhat).colwise().sum());
      if (pb->requires_grad) pb->accumulate(dy.colwise().sum());
      if (px->requires_grad) {
        const Eigen::RowVectorXd g = pg->value.row(0);
        Matrix dx(dy.rows(), dy.cols());
        const double c = static_cast<double>(dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
          const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(g);
          const double m1 = dxhat.sum() / c;
          const double m2 = dxhat.dot(xhat.row(r)) / c;
          dx.row(r) =
              inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
        }
        px->accumulate(dx);
      }
    };
  }
  return Tensor(n);
}

Tensor masked_mae(const Tensor& pred, const Matrix& target, const Matrix& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("masked_mae: pred/target shape mismatch");
  }
  if (mask.rows() != pred.rows() || mask.cols() != 1) {
    throw std::invalid_argument("masked_mae: mask must be [rows, 1]");
  }
  const double valid = mask.sum();
  if (valid <= 0.0) throw std::invalid_argument("masked_mae: all rows masked out");
  const double denom = valid * static_cast<double>(pred.cols());

  const Matrix diff = pred.value() - target;
  double total = 0.0;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    if (mask(r, 0) != 0.0) total += diff.row(r).cwiseAbs().sum();
  }
  Matrix v(1, 1);
  v(0, 0) = total / denom;
  auto n = make_node(std::move(v), {pred.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pp = pred.node().get();
    n->backward = [self, pp, diff, mask, denom] {
      if (!pp->requires_grad) return;
      Matrix dx = diff.array().sign().matrix() * (self->grad(0, 0) / denom);
      for (Eigen::Index r = 0; r < dx.rows(); ++r) {
        if (mask(r, 0) == 0.0) dx.row(r).setZero();
      }
      pp->accumulate(dx);
    };
  }
  return Tensor(n);
}

Tensor kl_gauss(const Tensor& mu, const Tensor& logvar) {
  check_same_shape(mu, logvar, "kl_gauss");
  const Matrix ev = logvar.value().array().exp().matrix();
  Matrix v(1, 1);
  v(0, 0) =
      0.5 *
      (ev.array() + mu.value().array().square() - 1.0 - logvar.value().array()).sum();
  auto n = make_node(std::move(v), {mu.node(), logvar.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* pm = mu.node().get();
    TensorNode* pl = logvar.node().get();
    n->backward = [self, pm, pl, ev] {
      const double g = self->grad(0, 0);
      if (pm->requires_grad) pm->accumulate(g * pm->value);
      if (pl->requires_grad) pl->accumulate((0.5 * g * (ev.array() - 1.0)).matrix());
    };
  }
  return Tensor(n);
}

// ---------------------------------------------------------------------------

Tensor im2col(const Tensor& x, const ConvGeom& g) {
  if (x.rows() != g.in_channels ||
      x.cols() != static_cast<Eigen::Index>(g.height) * g.width) {
    throw std::invalid_argument("im2col: feature map does not match geometry");
  }
  const int oh = g.out_height(), ow = g.out_width();
  const int kk = g.kernel * g.kernel;
  // map[k * oh*ow + p] = source spatial index, or -1 for padding
  std::vector<int> map(static_cast<size_t>(kk) * oh * ow, -1);
  for (int ky = 0; ky < g.kernel; ++ky) {
    for (int kx = 0; kx < g.kernel; ++kx) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const int iy = oy * g.stride + ky - g.pad;
          const int ix = ox * g.stride + kx - g.pad;
          if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
          map[(static_cast<size_t>(ky) * g.kernel + kx) * oh * ow +
              static_cast<size_t>(oy) * ow + ox] = iy * g.width + ix;
        }
      }
    }
  }
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(g.in_channels) * kk,
                          static_cast<Eigen::Index>(oh) * ow);
  const Matrix& xv = x.value();
  for (int c = 0; c < g.in_channels; ++c) {
    for (int k = 0; k < kk; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(c) * kk + k;
      const int* m = map.data() + static_cast<size_t>(k) * oh * ow;
      for (int p = 0; p < oh * ow; ++p) {
        if (m[p] >= 0) v(row, p) = xv(c, m[p]);
      }
    }
  }
  auto n = make_node(std::move(v), {x.node()});
  if (n->requires_grad) {
    TensorNode* self = n.get();
    TensorNode* px = x.node().get();
    const int channels = g.in_channels;
    const int positions = oh * ow;
    n->backward = [self, px, map, channels, kk, positions] {
      if (!px->requires_grad) return;
      ensure_grad(px);
      for (int c = 0; c < channels; ++c) {
        for (int k = 0; k < kk; ++k) {
          const Eigen::Index row = static_cast<Eigen::Index>(c) * kk + k;
          const int* m = map.data() + static_cast<size_t>(k) * positions;
          for (int p = 0; p < positions; ++p) {
            if (m[p] >= 0) px->grad(c, m[p]) += self->grad(row, p);
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvGeom& geom) {
  const Eigen::Index patch =
      static_cast<Eigen::Index>(geom.in_channels) * geom.kernel * geom.kernel;
  if (weight.cols() != patch) {
    throw std::invalid_argument("conv2d: weight must be [C_out, C_in*k*k]");
  }
  if (bias.cols() != 1 || bias.rows() != weight.rows()) {
    throw std::invalid_argument("conv2d: bias must be [C_out, 1]");
  }
  return add_colwise(matmul(weight, im2col(x, geom)), bias);
}

Matrix average_pool_matrix(int h_in, int w_in, int h_out, int w_out) {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(h_out) * w_out,
                          static_cast<Eigen::Index>(h_in) * w_in);
  for (int oy = 0; oy < h_out; ++oy) {
    const int y0 = oy * h_in / h_out;
    const int y1 = ((oy + 1) * h_in + h_out - 1) / h_out;
    for (int ox = 0; ox < w_out; ++ox) {
      const int x0 = ox * w_in / w_out;
      const int x1 = ((ox + 1) * w_in + w_out - 1) / w_out;
      const double w = 1.0 / ((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          p(static_cast<Eigen::Index>(oy) * w_out + ox,
            static_cast<Eigen::Index>(y) * w_in + x) = w;
        }
      }
    }
  }
  return p;
}

Tensor multihead_attention(const Tensor& query, const Tensor& memory,
                           const AttentionWeights& w, int heads) {
  const Eigen::Index d = query.cols();
  if (memory.cols() != d) throw std::invalid_argument("attention: dim mismatch");
  if (heads <= 0 || d % heads != 0) {
    throw std::invalid_argument("attention: model dim not divisible by heads");
  }
  const Eigen::Index dh = d / heads;
  Tensor q = add_rowwise(matmul(query, w.wq), w.bq);
  Tensor k = add_rowwise(matmul(memory, w.wk), w.bk);
  Tensor v = add_rowwise(matmul(memory, w.wv), w.bv);
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    ctx.push_back(matmul(softmax_rows(scores), vh));
  }
  return add_rowwise(matmul(concat_cols(ctx), w.wo), w.bo);
}

Matrix sinusoid_positions(int count, int dim) {
  Matrix p(count, dim);
  for (int pos = 0; pos < count; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / dim);
      p(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return p;
}

Matrix sinusoid_positions_2d(int rows, int cols, int dim) {
  const int half = dim / 2;
  const Matrix row_pe = sinusoid_positions(rows, half);
  const Matrix col_pe = sinusoid_positions(cols, dim - half);
  Matrix p(static_cast<Eigen::Index>(rows) * cols, dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      p.row(static_cast<Eigen::Index>(r) * cols + c) << row_pe.row(r), col_pe.row(c);
    }
  }
  return p;
}

}  // namespace bilat
