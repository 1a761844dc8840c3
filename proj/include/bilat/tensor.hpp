#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bilat {

using Matrix = Eigen::MatrixXd;

// One node of the reverse-mode tape. Values are 2-D double matrices; the
// backward closure scatters the node's grad into its parents. Parents are
// held by shared_ptr (children keep the tape alive); the closure only touches
// raw pointers so nodes never own themselves.
struct TensorNode {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;

  void accumulate(const Matrix& delta) {
    if (!has_grad) {
      grad = delta;
      has_grad = true;
    } else {
      grad += delta;
    }
  }
};

// Value-semantics handle over a tape node.
class Tensor {
 public:
  Tensor() = default;
  static Tensor constant(Matrix value);
  static Tensor leaf(Matrix value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad; }
  bool requires_grad() const { return node_->requires_grad; }

  // Reverse pass from a scalar (1x1) node.
  void backward() const;

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// -- elementwise / structural ops -------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_rowwise(const Tensor& a, const Tensor& row);  // [R,C] + [1,C]
Tensor add_colwise(const Tensor& a, const Tensor& col);  // [R,C] + [R,1] or [C] per-row bias
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& a);  // 1x1

// -- neural-net ops ----------------------------------------------------------
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Masked mean absolute error: mean over unmasked rows x all columns.
// target/mask are constants; mask is [R,1] of 0/1.
Tensor masked_mae(const Tensor& pred, const Matrix& target, const Matrix& mask);

// KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions:
// 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)
Tensor kl_gauss(const Tensor& mu, const Tensor& logvar);

// -- convolution --------------------------------------------------------------
// Feature maps are [channels, height*width] row-major in the spatial index.
struct ConvGeom {
  int in_channels = 0, height = 0, width = 0;
  int kernel = 3, stride = 1, pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// im2col gather: [C, H*W] -> [C*k*k, outH*outW]; backward scatter-adds.
Tensor im2col(const Tensor& x, const ConvGeom& geom);

// conv + bias: weight [C_out, C_in*k*k], bias [C_out, 1] -> [C_out, outH*outW]
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const ConvGeom& geom);

// Average-pooling matrix mapping an HxW grid onto a coarser grid; multiply a
// [C, H*W] feature map by its transpose to pool.
Matrix average_pool_matrix(int h_in, int w_in, int h_out, int w_out);

// -- attention ----------------------------------------------------------------
struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // w: [d,d], b: [1,d]
};

// Multi-head scaled dot-product attention; query [Tq,d], memory [Tk,d].
Tensor multihead_attention(const Tensor& query, const Tensor& memory,
                           const AttentionWeights& w, int heads);

// Fixed sinusoidal position table, [count, dim].
Matrix sinusoid_positions(int count, int dim);
// 2-D variant for a grid of vision tokens (row/col halves), [rows*cols, dim].
Matrix sinusoid_positions_2d(int rows, int cols, int dim);

}  // namespace bilat
