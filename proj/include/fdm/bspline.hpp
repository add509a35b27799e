#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace fdm {

// B-spline basis on [0,1] with equally spaced interior knots and clamped
// (repeated) boundary knots. `size` is the number of basis functions, so the
// interior knot count is size - degree - 1.
class BSplineBasis {
 public:
  explicit BSplineBasis(int size, int degree = 3) : size_(size), degree_(degree) {
    if (degree < 1) throw std::invalid_argument("BSplineBasis: degree must be >= 1");
    if (size < degree + 1)
      throw std::invalid_argument("BSplineBasis: size must be at least degree + 1");
    const int interior = size - degree - 1;
    knots_.reserve(size + degree + 1);
    for (int i = 0; i <= degree; ++i) knots_.push_back(0.0);
    for (int i = 1; i <= interior; ++i)
      knots_.push_back(static_cast<double>(i) / (interior + 1));
    for (int i = 0; i <= degree; ++i) knots_.push_back(1.0);
  }

  int size() const { return size_; }
  int degree() const { return degree_; }
  int interior_knots() const { return size_ - degree_ - 1; }
  const std::vector<double>& knots() const { return knots_; }

  // All basis values at x; zero outside [0,1].
  Eigen::VectorXd evaluate(double x) const { return basis_all(x, degree_); }

  // Basis derivatives of the given order at x.
  Eigen::VectorXd derivative(double x, int order) const {
    if (order < 0) throw std::invalid_argument("BSplineBasis: negative derivative order");
    if (order == 0) return evaluate(x);
    if (order > degree_) return Eigen::VectorXd::Zero(size_);
    // start from the lower-degree basis and apply the difference relation
    Eigen::VectorXd v = basis_all(x, degree_ - order);
    for (int k = degree_ - order + 1; k <= degree_; ++k) {
      const int count = static_cast<int>(knots_.size()) - k - 1;
      Eigen::VectorXd next = Eigen::VectorXd::Zero(count);
      for (int j = 0; j < count; ++j) {
        double acc = 0.0;
        const double d1 = knots_[j + k] - knots_[j];
        if (d1 > 0.0) acc += v(j) / d1;
        const double d2 = knots_[j + k + 1] - knots_[j + 1];
        if (d2 > 0.0) acc -= v(j + 1) / d2;
        next(j) = k * acc;
      }
      v = next;
    }
    return v;
  }

  // Rows = evaluation points, columns = basis functions.
  Eigen::MatrixXd evaluate_matrix(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd m(x.size(), size_);
    for (Eigen::Index i = 0; i < x.size(); ++i) m.row(i) = evaluate(x(i)).transpose();
    return m;
  }

  // G_jk = int_0^1 B_j''(t) B_k''(t) dt, assembled span by span with
  // Gauss-Legendre nodes. The integrand is piecewise polynomial of degree
  // 2(degree-2), so five nodes per span are exact for degree <= 5.
  Eigen::MatrixXd curvature_penalty() const {
    static const double nodes[5] = {-0.906179845938664, -0.5384693101056831, 0.0,
                                    0.5384693101056831, 0.906179845938664};
    static const double wts[5] = {0.23692688505618908, 0.47862867049936647,
                                  0.5688888888888889, 0.47862867049936647,
                                  0.23692688505618908};
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(size_, size_);
    for (std::size_t s = 0; s + 1 < knots_.size(); ++s) {
      const double a = knots_[s];
      const double b = knots_[s + 1];
      if (!(b > a)) continue;
      const double half = 0.5 * (b - a);
      const double mid = 0.5 * (a + b);
      for (int q = 0; q < 5; ++q) {
        const Eigen::VectorXd d2 = derivative(mid + half * nodes[q], 2);
        g.noalias() += (half * wts[q]) * (d2 * d2.transpose());
      }
    }
    return g;
  }

 private:
  // Cox-de Boor bottom-up over the whole knot vector; returns the complete
  // degree-`deg` basis (length knots - deg - 1).
  Eigen::VectorXd basis_all(double x, int deg) const {
    const int n_knots = static_cast<int>(knots_.size());
    const double last = knots_.back();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_knots - 1);
    if (x < knots_.front() || x > last) return Eigen::VectorXd::Zero(n_knots - deg - 1);
    for (int j = 0; j < n_knots - 1; ++j) {
      const bool inside = (x >= knots_[j] && x < knots_[j + 1]) ||
                          (x == last && knots_[j] < knots_[j + 1] && knots_[j + 1] == last);
      v(j) = inside ? 1.0 : 0.0;
    }
    for (int k = 1; k <= deg; ++k) {
      const int count = n_knots - k - 1;
      Eigen::VectorXd next = Eigen::VectorXd::Zero(count);
      for (int j = 0; j < count; ++j) {
        double acc = 0.0;
        const double d1 = knots_[j + k] - knots_[j];
        if (d1 > 0.0) acc += (x - knots_[j]) / d1 * v(j);
        const double d2 = knots_[j + k + 1] - knots_[j + 1];
        if (d2 > 0.0) acc += (knots_[j + k + 1] - x) / d2 * v(j + 1);
        next(j) = acc;
      }
      v = next;
    }
    return v;
  }

  int size_;
  int degree_;
  std::vector<double> knots_;
};

}  // namespace fdm
