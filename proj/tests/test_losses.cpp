#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "csdn/errors.hpp"
#include "csdn/losses.hpp"
#include "support.hpp"

using csdn::Matrix;
using csdn::RowVector;
namespace L = csdn::losses;

namespace {

// Independent reference implementations written with plain loops.
double oracle_cos(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    dot += a(i, k) * b(j, k);
    na += a(i, k) * a(i, k);
    nb += b(j, k) * b(j, k);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double oracle_identity(const Matrix& logits, const std::vector<int>& y) {
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double z = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(i, c));
    total += -std::log(std::exp(logits(i, y[i])) / z);
  }
  return total / logits.rows();
}

double oracle_wrt(const Matrix& x, const std::vector<int>& y) {
  const auto n = x.rows();
  auto dist = [&](Eigen::Index i, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) s += (x(i, k) - x(j, k)) * (x(i, k) - x(j, k));
    return std::sqrt(s);
  };
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double pn = 0, pd = 0, nn = 0, nd = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = dist(i, j);
      if (y[j] == y[i]) {
        pn += std::exp(d) * d;
        pd += std::exp(d);
      } else {
        nn += std::exp(-d) * d;
        nd += std::exp(-d);
      }
    }
    total += std::log(1 + std::exp(pn / pd - nn / nd));
  }
  return total / n;
}

double oracle_i2t(const Matrix& img, const Matrix& txt) {
  double total = 0;
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < img.rows(); ++j) z += std::exp(oracle_cos(img, i, txt, j));
    total += -std::log(std::exp(oracle_cos(img, i, txt, i)) / z);
  }
  return total / img.rows();
}

double oracle_t2i(const Matrix& img, const std::vector<int>& y, const Matrix& txt) {
  double total = 0;
  const auto n = img.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < n; ++j) z += std::exp(oracle_cos(img, j, txt, i));
    double inner = 0;
    int count = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (y[p] != y[i]) continue;
      inner += std::log(std::exp(oracle_cos(img, p, txt, i)) / z);
      ++count;
    }
    total += -inner / count;
  }
  return total / n;
}

double oracle_ce(const Matrix& img, const std::vector<int>& y, const Matrix& bank) {
  double total = 0;
  for (Eigen::Index i = 0; i < img.rows(); ++i) {
    double z = 0;
    for (Eigen::Index a = 0; a < bank.rows(); ++a) z += std::exp(oracle_cos(img, i, bank, a));
    total += -std::log(std::exp(oracle_cos(img, i, bank, y[i])) / z);
  }
  return total / img.rows();
}

// Labels where every class appears at least twice, so triplet anchors are valid.
std::vector<int> paired_labels(int n, int classes, std::mt19937_64& rng) {
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = (i / 2) % classes;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

Matrix text_rows(const Matrix& bank, const std::vector<int>& y) {
  Matrix t(static_cast<Eigen::Index>(y.size()), bank.cols());
  for (std::size_t i = 0; i < y.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = bank.row(y[i]);
  return t;
}

}  // namespace

TEST_CASE("similarity examples") {
  const RowVector x = (RowVector(3) << 0.3, -2.0, 1.5).finished();
  CHECK(L::similarity(x, x).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(L::similarity(RowVector::Unit(2, 0), RowVector::Unit(2, 1)).value == 0.0);
  CHECK(L::similarity((RowVector(2) << 1, 1).finished(), RowVector::Unit(2, 0)).value ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  const auto zero = L::similarity(RowVector::Zero(3), x);
  CHECK(zero.guarded);
  CHECK(std::isfinite(zero.value));
  CHECK_FALSE(L::similarity(x, x).guarded);
}

TEST_CASE("identity loss closed forms") {
  const Matrix uniform = Matrix::Constant(3, 4, 0.7);
  std::vector<int> y{0, 2, 3};
  CHECK(L::identity_loss(uniform, y).loss.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(L::identity_loss(uniform, y).loss.value - std::log(4.0)) <= 1e-9);

  Matrix peaked = Matrix::Zero(1, 4);
  peaked(0, 0) = 10.0;
  std::vector<int> y0{0};
  CHECK(L::identity_loss(peaked, y0).loss.value == doctest::Approx(std::log1p(3.0 * std::exp(-10.0))).epsilon(1e-9));
  CHECK(L::identity_loss(peaked, y0).loss.value == doctest::Approx(1.3611e-4).epsilon(1e-3));

  for (int nc : {2, 5, 16}) {
    std::vector<int> labels{0, nc - 1};
    CHECK(std::abs(L::identity_loss(Matrix::Zero(2, nc), labels).loss.value - std::log(nc)) <= 1e-9);
  }
  std::vector<int> bad{4};
  CHECK_THROWS_AS(L::identity_loss(Matrix::Zero(1, 4), bad), csdn::InputError);
}

TEST_CASE("identity loss gradient") {
  std::mt19937_64 rng(21);
  Matrix logits = testing::random_matrix(8, 5, rng);
  std::vector<int> y{0, 1, 2, 3, 4, 0, 1, 2};
  const auto out = L::identity_loss(logits, y);
  CHECK(out.loss.value == doctest::Approx(oracle_identity(logits, y)).epsilon(1e-12));
  auto f = [&] { return L::identity_loss(logits, y).loss.value; };
  CHECK(testing::relative_error(out.d_input, testing::numeric_gradient(f, logits)) <= 1e-4);
}

TEST_CASE("weighted triplet anchor examples") {
  const std::vector<double> one{1.0}, zero{0.0}, two{2.0};
  CHECK(std::abs(L::weighted_triplet_anchor_term(one, one) - std::log(2.0)) <= 1e-9);
  CHECK(L::weighted_triplet_anchor_term(zero, two) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(L::weighted_triplet_anchor_term(zero, two) == doctest::Approx(0.1269).epsilon(1e-3));

  // Two negatives at 1 and 3: softmax(-d) weighted mean 1.2384, loss ln(1 + e^{1 - 1.2384}).
  const std::vector<double> negs{1.0, 3.0};
  const double wn = (std::exp(-1.0) * 1.0 + std::exp(-3.0) * 3.0) / (std::exp(-1.0) + std::exp(-3.0));
  CHECK(wn == doctest::Approx(1.2384).epsilon(1e-4));
  const double expected = std::log1p(std::exp(1.0 - wn));
  CHECK(L::weighted_triplet_anchor_term(one, negs) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(L::weighted_triplet_anchor_term(one, negs) == doctest::Approx(0.5810).epsilon(1e-4));

  const std::vector<double> empty;
  CHECK_THROWS_AS(L::weighted_triplet_anchor_term(empty, one), csdn::InputError);
}

TEST_CASE("weighted regularized triplet over a batch") {
  // Symmetric configuration: every anchor sees one positive and one negative at distance 1.
  Matrix x(4, 2);
  x << 0, 0, 1, 0, 0, 1, 1, 1;
  std::vector<int> y{0, 0, 1, 1};
  CHECK(L::weighted_regularized_triplet(x, y).loss.value ==
        doctest::Approx(oracle_wrt(x, y)).epsilon(1e-12));

  Matrix line(4, 1);
  line << 0, 1, 0, 1;  // anchor 0: positive (row 2) at 0, negatives at 1
  std::vector<int> yl{0, 1, 0, 1};
  Matrix shifted = line.array() + 5.0;
  CHECK(L::weighted_regularized_triplet(line, yl).loss.value ==
        doctest::Approx(L::weighted_regularized_triplet(shifted, yl).loss.value).epsilon(1e-12));

  Matrix sq(4, 2);
  sq << 0, 0, 1, 0, 1, 1, 0, 1;  // unit square, positives along one edge
  std::vector<int> ys{0, 0, 1, 1};
  // Each anchor: positive at 1, negatives at 1 and sqrt(2).
  const double wn = (std::exp(-1.0) + std::exp(-std::sqrt(2.0)) * std::sqrt(2.0)) /
                    (std::exp(-1.0) + std::exp(-std::sqrt(2.0)));
  CHECK(L::weighted_regularized_triplet(sq, ys).loss.value ==
        doctest::Approx(std::log1p(std::exp(1.0 - wn))).epsilon(1e-12));

  std::vector<int> lonely{0, 0, 1, 2};
  CHECK_THROWS_AS(L::weighted_regularized_triplet(sq, lonely), csdn::InputError);
  std::vector<int> single_class{0, 0, 0, 0};
  CHECK_THROWS_AS(L::weighted_regularized_triplet(sq, single_class), csdn::InputError);
}

TEST_CASE("symmetric triplet batch equals ln 2") {
  // Regular tetrahedron with unit edges: every anchor has one positive and two
  // negatives, all at distance 1, so each term is softplus(0).
  Matrix tet(4, 3);
  const double h = 1.0 / (2.0 * std::sqrt(2.0));
  tet << h, h, h, h, -h, -h, -h, h, -h, -h, -h, h;
  std::vector<int> y{0, 0, 1, 1};
  CHECK(std::abs(L::weighted_regularized_triplet(tet, y).loss.value - std::log(2.0)) <= 1e-9);
}

TEST_CASE("weighted regularized triplet gradient on random instances") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4 + 2 * (trial % 3);
    const int d = 2 + trial % 7;
    Matrix x = testing::random_matrix(n, d, rng);
    auto y = paired_labels(n, 2 + trial % 2, rng);
    const auto out = L::weighted_regularized_triplet(x, y);
    CHECK(out.loss.value == doctest::Approx(oracle_wrt(x, y)).epsilon(1e-12));
    CHECK(out.loss.value >= 0.0);
    auto f = [&] { return L::weighted_regularized_triplet(x, y).loss.value; };
    CHECK(testing::relative_error(out.d_input, testing::numeric_gradient(f, x)) <= 1e-4);
  }
}

TEST_CASE("image to text contrastive examples") {
  const Matrix eye = Matrix::Identity(2, 2);
  const double term = L::image_to_text_contrastive(eye, eye).loss.value;
  CHECK(term == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(term == doctest::Approx(0.3133).epsilon(1e-3));
  CHECK(2.0 * term == doctest::Approx(0.6266).epsilon(1e-3));

  std::mt19937_64 rng(2);
  const Matrix img = testing::random_matrix(5, 3, rng);
  const Matrix same = Matrix::Ones(5, 3);
  CHECK(std::abs(L::image_to_text_contrastive(img, same).loss.value - std::log(5.0)) <= 1e-9);
}

TEST_CASE("text to image contrastive examples") {
  const Matrix eye = Matrix::Identity(2, 2);
  std::vector<int> y{0, 1};
  CHECK(L::text_to_image_contrastive(eye, y, eye).loss.value ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));

  std::mt19937_64 rng(4);
  const Matrix text = testing::random_matrix(4, 3, rng);
  const Matrix img = Matrix::Ones(4, 3);
  std::vector<int> y4{0, 1, 2, 3};
  CHECK(std::abs(L::text_to_image_contrastive(img, y4, text).loss.value - std::log(4.0)) <= 1e-9);

  // Two positives with equal similarity: the inner average equals either term.
  Matrix pair(3, 2);
  pair << 1, 0, 1, 0, 0, 1;
  std::vector<int> yp{0, 0, 1};
  Matrix bank(2, 2);
  bank << 1, 0, 0, 1;
  const Matrix t = text_rows(bank, yp);
  const double z = 2.0 * std::exp(1.0) + 1.0;
  const double anchor0 = -std::log(std::exp(1.0) / z);
  const double anchor2 = -std::log(std::exp(1.0) / (2.0 + std::exp(1.0)));
  CHECK(L::text_to_image_contrastive(pair, yp, t).loss.value ==
        doctest::Approx((2.0 * anchor0 + anchor2) / 3.0).epsilon(1e-12));
}

TEST_CASE("image to text cross-entropy examples") {
  Matrix img(1, 4);
  img << 1, 0, 0, 0;
  const Matrix bank = Matrix::Identity(4, 4);
  std::vector<int> y{0};
  CHECK(L::image_to_text_ce(img, y, bank).loss.value == doctest::Approx(std::log1p(3.0 * std::exp(-1.0))).epsilon(1e-12));
  CHECK(L::image_to_text_ce(img, y, bank).loss.value == doctest::Approx(0.7437).epsilon(1e-3));
  const Matrix flat = Matrix::Ones(4, 4);
  CHECK(std::abs(L::image_to_text_ce(img, y, flat).loss.value - std::log(4.0)) <= 1e-9);
  std::vector<int> bad{4};
  CHECK_THROWS_AS(L::image_to_text_ce(img, bad, bank), csdn::InputError);
}

TEST_CASE("contrastive losses match oracles and finite differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 2 + trial % 5 + 2;
    const int d = 2 + trial % 7;
    const int classes = 2 + trial % 3;
    Matrix img = testing::random_matrix(n, d, rng);
    Matrix bank = testing::random_matrix(classes, d, rng);
    auto y = paired_labels(n, classes, rng);
    for (int i = 0; i < n; ++i) y[i] %= classes;
    Matrix txt = text_rows(bank, y);

    const auto i2t = L::image_to_text_contrastive(img, txt);
    CHECK(i2t.loss.value == doctest::Approx(oracle_i2t(img, txt)).epsilon(1e-12));
    auto fi2t = [&] { return L::image_to_text_contrastive(img, txt).loss.value; };
    CHECK(testing::relative_error(i2t.d_image, testing::numeric_gradient(fi2t, img)) <= 1e-4);
    CHECK(testing::relative_error(i2t.d_text, testing::numeric_gradient(fi2t, txt)) <= 1e-4);

    const auto t2i = L::text_to_image_contrastive(img, y, txt);
    CHECK(t2i.loss.value == doctest::Approx(oracle_t2i(img, y, txt)).epsilon(1e-12));
    auto ft2i = [&] { return L::text_to_image_contrastive(img, y, txt).loss.value; };
    CHECK(testing::relative_error(t2i.d_image, testing::numeric_gradient(ft2i, img)) <= 1e-4);
    CHECK(testing::relative_error(t2i.d_text, testing::numeric_gradient(ft2i, txt)) <= 1e-4);

    const auto ce = L::image_to_text_ce(img, y, bank);
    CHECK(ce.loss.value == doctest::Approx(oracle_ce(img, y, bank)).epsilon(1e-12));
    auto fce = [&] { return L::image_to_text_ce(img, y, bank).loss.value; };
    CHECK(testing::relative_error(ce.d_image, testing::numeric_gradient(fce, img)) <= 1e-4);
    CHECK(testing::relative_error(ce.d_text, testing::numeric_gradient(fce, bank)) <= 1e-4);
  }
}

TEST_CASE("similarity losses are scale invariant and non-negative") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4, d = 3 + trial % 4;
    const Matrix img = testing::random_matrix(n, d, rng);
    const Matrix bank = testing::random_matrix(3, d, rng);
    std::vector<int> y{0, 1, 2, trial % 3};
    const Matrix txt = text_rows(bank, y);
    Matrix img_scaled = img;
    for (int i = 0; i < n; ++i) img_scaled.row(i) *= scale(rng);
    const double a = L::image_to_text_contrastive(img, txt).loss.value;
    const double b = L::image_to_text_contrastive(img_scaled, txt).loss.value;
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
    CHECK(L::text_to_image_contrastive(img, y, txt).loss.value ==
          doctest::Approx(L::text_to_image_contrastive(img_scaled, y, txt).loss.value).epsilon(1e-10));
    CHECK(L::image_to_text_ce(img, y, bank).loss.value ==
          doctest::Approx(L::image_to_text_ce(img_scaled, y, bank).loss.value).epsilon(1e-10));
    CHECK(a >= 0.0);
    CHECK(L::image_to_text_ce(img, y, bank).loss.value >= 0.0);
  }
}

TEST_CASE("stage 3 combination") {
  const L::LossWeights w;
  CHECK(w.lambda1 == 0.15);
  CHECK(w.lambda2 == 0.05);
  CHECK(w.lambda3 == 0.1);
  const auto v = L::combine_stage3({1.0, 2.0, 3.0, 4.0}, w);
  CHECK(v.value == doctest::Approx(1.85).epsilon(1e-12));
  CHECK(v.components.at("triplet") == 2.0);

  std::mt19937_64 rng(17);
  Matrix features = testing::random_matrix(8, 4, rng);
  Matrix logits = testing::random_matrix(8, 3, rng);
  const Matrix vb = testing::random_matrix(3, 4, rng);
  const Matrix rb = testing::random_matrix(3, 4, rng);
  std::vector<int> y{0, 0, 1, 1, 2, 2, 0, 1};
  std::vector<csdn::Modality> m;
  for (int i = 0; i < 8; ++i) m.push_back(i % 2 ? csdn::Modality::kInfrared : csdn::Modality::kVisible);

  const auto zero = L::stage3_total(features, logits, y, m, vb, rb, {0.0, 0.0, 0.0});
  CHECK(zero.loss.value == doctest::Approx(L::identity_loss(logits, y).loss.value).epsilon(1e-15));
  CHECK(zero.d_features.isZero(0.0));

  const auto full = L::stage3_total(features, logits, y, m, vb, rb, w);
  // Components recomputed independently.
  std::vector<int> yv, yr;
  Matrix fv(4, 4), fr(4, 4);
  for (int i = 0, a = 0, b = 0; i < 8; ++i) {
    if (i % 2 == 0) {
      fv.row(a++) = features.row(i);
      yv.push_back(y[i]);
    } else {
      fr.row(b++) = features.row(i);
      yr.push_back(y[i]);
    }
  }
  const double expected = oracle_identity(logits, y) + 0.15 * oracle_wrt(features, y) + 0.05 * oracle_ce(fv, yv, vb) +
                          0.1 * oracle_ce(fr, yr, rb);
  CHECK(full.loss.value == doctest::Approx(expected).epsilon(1e-12));

  auto ff = [&] { return L::stage3_total(features, logits, y, m, vb, rb, w).loss.value; };
  CHECK(testing::relative_error(full.d_features, testing::numeric_gradient(ff, features)) <= 1e-4);
  CHECK(testing::relative_error(full.d_logits, testing::numeric_gradient(ff, logits)) <= 1e-4);
}

TEST_CASE("normalization guard") {
  int guarded = 0;
  const Matrix u = L::normalize_rows(Matrix::Zero(2, 3), &guarded);
  CHECK(guarded == 2);
  CHECK(u.allFinite());
  Matrix img(2, 2);
  img << 0, 0, 1, 0;
  const Matrix bank = Matrix::Identity(2, 2);
  std::vector<int> y{0, 1};
  const auto ce = L::image_to_text_ce(img, y, bank);
  CHECK(ce.loss.components.at("norm_guard") == 1.0);
  CHECK(std::isfinite(ce.loss.value));
}
