#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "bilat/tensor.hpp"

using namespace bilat;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

// Checks analytic gradients of a scalar-valued graph against central finite
// differences at sampled entries of every input.
void gradcheck(std::vector<Matrix> inputs,
               const std::function<Tensor(const std::vector<Tensor>&)>& f,
               double tol = 2e-6, int probes = 6) {
  auto build = [&](const std::vector<Matrix>& vals) {
    std::vector<Tensor> leaves;
    leaves.reserve(vals.size());
    for (const auto& v : vals) leaves.push_back(Tensor::leaf(v, true));
    return f(leaves);
  };

  std::vector<Tensor> leaves;
  for (const auto& v : inputs) leaves.push_back(Tensor::leaf(v, true));
  Tensor out = f(leaves);
  REQUIRE(out.value().size() == 1);
  out.backward();

  std::mt19937_64 rng(12345);
  const double h = 1e-6;
  for (size_t i = 0; i < inputs.size(); ++i) {
    REQUIRE(leaves[i].has_grad());
    for (int probe = 0; probe < probes; ++probe) {
      const Eigen::Index r = std::uniform_int_distribution<Eigen::Index>(
          0, inputs[i].rows() - 1)(rng);
      const Eigen::Index c = std::uniform_int_distribution<Eigen::Index>(
          0, inputs[i].cols() - 1)(rng);
      std::vector<Matrix> plus = inputs, minus = inputs;
      plus[i](r, c) += h;
      minus[i](r, c) -= h;
      const double fd = (build(plus).value()(0, 0) - build(minus).value()(0, 0)) / (2 * h);
      const double an = leaves[i].grad()(r, c);
      // relative where the gradient is meaningful, absolute where it vanishes
      // (e.g. softmax is invariant to uniform key shifts, so fd is pure noise)
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      CHECK_MESSAGE(err < tol, "input ", i, " entry (", r, ",", c, "): analytic ", an,
                    " vs fd ", fd);
    }
  }
}

// weight the output entries so gradients are direction-dependent
Tensor weighted_sum(const Tensor& t, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix w(t.rows(), t.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
  return sum_all(hadamard(t, Tensor::constant(w)));
}

}  // namespace

TEST_CASE("gradcheck: matmul") {
  std::mt19937_64 rng(1);
  gradcheck({random_matrix(3, 4, rng), random_matrix(4, 5, rng)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(matmul(in[0], in[1]));
            });
}

TEST_CASE("gradcheck: broadcast adds") {
  std::mt19937_64 rng(2);
  gradcheck({random_matrix(4, 6, rng), random_matrix(1, 6, rng)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(add_rowwise(in[0], in[1]));
            });
  gradcheck({random_matrix(4, 6, rng), random_matrix(4, 1, rng)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(add_colwise(in[0], in[1]));
            });
}

TEST_CASE("gradcheck: elementwise chain") {
  std::mt19937_64 rng(3);
  gradcheck({random_matrix(3, 3, rng), random_matrix(3, 3, rng)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(hadamard(exp(scale(in[0], 0.5)), sub(in[1], in[0])));
            });
}

TEST_CASE("gradcheck: relu away from the kink") {
  std::mt19937_64 rng(4);
  Matrix m = random_matrix(4, 4, rng);
  // keep entries off zero so finite differences are valid
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (std::abs(m(i)) < 0.05) m(i) = 0.1;
  }
  gradcheck({m}, [](const std::vector<Tensor>& in) {
    return weighted_sum(relu(in[0]));
  });
}

TEST_CASE("gradcheck: softmax rows") {
  std::mt19937_64 rng(5);
  gradcheck({random_matrix(3, 5, rng, -2.0, 2.0)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(softmax_rows(in[0]));
            });
}

TEST_CASE("softmax rows are normalized") {
  std::mt19937_64 rng(6);
  Tensor s = softmax_rows(Tensor::constant(random_matrix(4, 7, rng, -3.0, 3.0)));
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    CHECK(s.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.value().row(r).minCoeff() > 0.0);
  }
}

TEST_CASE("gradcheck: layer norm") {
  std::mt19937_64 rng(7);
  gradcheck({random_matrix(3, 6, rng), random_matrix(1, 6, rng, 0.5, 1.5),
             random_matrix(1, 6, rng)},
            [](const std::vector<Tensor>& in) {
              return weighted_sum(layer_norm(in[0], in[1], in[2]));
            },
            5e-5);
}

TEST_CASE("gradcheck: slicing and concatenation") {
  std::mt19937_64 rng(8);
  gradcheck({random_matrix(6, 4, rng), random_matrix(2, 4, rng)},
            [](const std::vector<Tensor>& in) {
              Tensor top = slice_rows(in[0], 0, 3);
              Tensor cat = concat_rows({top, in[1]});
              Tensor left = slice_cols(cat, 0, 2);
              Tensor right = slice_cols(cat, 2, 2);
              return weighted_sum(concat_cols({right, left}));
            });
}

TEST_CASE("gradcheck and value: masked mae") {
  std::mt19937_64 rng(9);
  Matrix target = random_matrix(5, 3, rng);
  Matrix mask(5, 1);
  mask << 1, 1, 1, 0, 0;

  SUBCASE("value is the mean abs error over unmasked rows") {
    Matrix pred = target;
    pred(0, 0) += 0.3;
    pred(2, 1) -= 0.6;
    Tensor loss = masked_mae(Tensor::constant(pred), target, mask);
    CHECK(loss.value()(0, 0) == doctest::Approx((0.3 + 0.6) / (3 * 3)).epsilon(1e-12));
  }
  SUBCASE("perfect prediction scores zero") {
    Tensor loss = masked_mae(Tensor::constant(target), target, mask);
    CHECK(loss.value()(0, 0) == 0.0);
  }
  SUBCASE("masked rows do not contribute") {
    Matrix pred = random_matrix(5, 3, rng);
    Matrix pred2 = pred;
    pred2.row(4).setConstant(1000.0);
    const double a = masked_mae(Tensor::constant(pred), target, mask).value()(0, 0);
    const double b = masked_mae(Tensor::constant(pred2), target, mask).value()(0, 0);
    CHECK(a == b);
  }
  SUBCASE("gradient") {
    gradcheck({random_matrix(5, 3, rng)},
              [&](const std::vector<Tensor>& in) {
                return masked_mae(in[0], target, mask);
              });
  }
  SUBCASE("fully masked input is rejected") {
    Matrix none = Matrix::Zero(5, 1);
    CHECK_THROWS_AS(masked_mae(Tensor::constant(target), target, none),
                    std::invalid_argument);
  }
}

TEST_CASE("gradcheck and value: gaussian KL") {
  SUBCASE("unit mean, unit variance: kl = z_dim/2") {
    Matrix mu = Matrix::Ones(1, 4);
    Matrix lv = Matrix::Zero(1, 4);
    Tensor kl = kl_gauss(Tensor::constant(mu), Tensor::constant(lv));
    CHECK(kl.value()(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("prior-matched posterior has zero kl") {
    Tensor kl = kl_gauss(Tensor::constant(Matrix::Zero(1, 8)),
                         Tensor::constant(Matrix::Zero(1, 8)));
    CHECK(kl.value()(0, 0) == 0.0);
  }
  SUBCASE("kl is non-negative") {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 200; ++i) {
      Matrix mu = random_matrix(1, 6, rng, -2.0, 2.0);
      Matrix lv = random_matrix(1, 6, rng, -3.0, 3.0);
      Tensor kl = kl_gauss(Tensor::constant(mu), Tensor::constant(lv));
      CHECK(kl.value()(0, 0) >= 0.0);
    }
  }
  SUBCASE("gradient") {
    std::mt19937_64 rng(11);
    gradcheck({random_matrix(1, 5, rng), random_matrix(1, 5, rng)},
              [](const std::vector<Tensor>& in) {
                return kl_gauss(in[0], in[1]);
              });
  }
}

TEST_CASE("gradcheck: im2col and conv2d") {
  std::mt19937_64 rng(12);
  ConvGeom g;
  g.in_channels = 2;
  g.height = 5;
  g.width = 6;
  g.kernel = 3;
  g.stride = 2;
  g.pad = 1;
  gradcheck({random_matrix(2, 30, rng), random_matrix(3, 18, rng),
             random_matrix(3, 1, rng)},
            [&](const std::vector<Tensor>& in) {
              return weighted_sum(conv2d(in[0], in[1], in[2], g));
            });
  CHECK(g.out_height() == 3);
  CHECK(g.out_width() == 3);
}

TEST_CASE("average pool matrix rows are convex weights") {
  Matrix p = average_pool_matrix(6, 8, 4, 6);
  CHECK(p.rows() == 24);
  CHECK(p.cols() == 48);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("gradcheck: multihead attention") {
  std::mt19937_64 rng(13);
  const int d = 8;
  AttentionWeights w;
  std::vector<Matrix> mats = {
      random_matrix(3, d, rng),          // query
      random_matrix(5, d, rng),          // memory
      random_matrix(d, d, rng, -0.5, 0.5), random_matrix(1, d, rng),  // q
      random_matrix(d, d, rng, -0.5, 0.5), random_matrix(1, d, rng),  // k
      random_matrix(d, d, rng, -0.5, 0.5), random_matrix(1, d, rng),  // v
      random_matrix(d, d, rng, -0.5, 0.5), random_matrix(1, d, rng),  // o
  };
  gradcheck(mats,
            [](const std::vector<Tensor>& in) {
              AttentionWeights w{in[2], in[3], in[4], in[5],
                                 in[6], in[7], in[8], in[9]};
              return weighted_sum(multihead_attention(in[0], in[1], w, 2));
            },
            1e-5);
}

TEST_CASE("sinusoid position tables have the expected shape and range") {
  Matrix p = sinusoid_positions(10, 16);
  CHECK(p.rows() == 10);
  CHECK(p.cols() == 16);
  CHECK(p.maxCoeff() <= 1.0);
  CHECK(p.minCoeff() >= -1.0);
  Matrix p2 = sinusoid_positions_2d(4, 6, 16);
  CHECK(p2.rows() == 24);
  CHECK(p2.cols() == 16);
  // distinct grid cells get distinct codes
  bool all_distinct = true;
  for (int a = 0; a < 24 && all_distinct; ++a)
    for (int b = a + 1; b < 24; ++b)
      if ((p2.row(a) - p2.row(b)).norm() < 1e-9) { all_distinct = false; break; }
  CHECK(all_distinct);
}

TEST_CASE("shape errors are rejected") {
  Tensor a = Tensor::constant(Matrix::Zero(2, 3));
  Tensor b = Tensor::constant(Matrix::Zero(3, 2));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(slice_rows(a, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(a.backward(), std::invalid_argument);  // non-scalar
}

TEST_CASE("gradients accumulate across reuse of the same leaf") {
  // f = sum(x * x) + sum(x): df/dx = 2x + 1
  Matrix xv(2, 2);
  xv << 1.0, -2.0, 0.5, 3.0;
  Tensor x = Tensor::leaf(xv, true);
  Tensor f = add(sum_all(hadamard(x, x)), sum_all(x));
  f.backward();
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      CHECK(x.grad()(i, j) == doctest::Approx(2.0 * xv(i, j) + 1.0).epsilon(1e-12));
}
