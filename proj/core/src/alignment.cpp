#include "entropic/alignment.hpp"

#include <cmath>

#include "entropic/linalg.hpp"

namespace entropic {
namespace {

void check_pair(const Matrix& ha, const Matrix& hb) {
  if (ha.rows() != hb.rows()) throw DimensionError("representations need the same sample count");
  if (ha.rows() < 2) throw DimensionError("alignment needs at least two samples");
}

Matrix center_columns(const Matrix& h) {
  Matrix c = h;
  for (std::size_t j = 0; j < h.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < h.rows(); ++i) m += h(i, j);
    m /= static_cast<double>(h.rows());
    for (std::size_t i = 0; i < h.rows(); ++i) c(i, j) -= m;
  }
  return c;
}

}  // namespace

double gram_alignment(const Matrix& ha, const Matrix& hb) {
  check_pair(ha, hb);
  const Matrix ga = matmul_nt(ha, ha);
  const Matrix gb = matmul_nt(hb, hb);
  const double na = frobenius_norm(ga), nb = frobenius_norm(gb);
  if (na == 0.0 || nb == 0.0) throw NumericalError("gram_alignment: zero representation");
  return frobenius_dot(ga, gb) / (na * nb);
}

double cka(const Matrix& ha, const Matrix& hb, bool centered) {
  check_pair(ha, hb);
  const Matrix a = centered ? center_columns(ha) : ha;
  const Matrix b = centered ? center_columns(hb) : hb;
  const double num = frobenius_sq(matmul_tn(a, b));
  const double den = frobenius_norm(matmul_tn(a, a)) * frobenius_norm(matmul_tn(b, b));
  if (den == 0.0) throw NumericalError("cka: zero representation");
  return num / den;
}

ProcrustesResult procrustes_fit(const Matrix& ha, const Matrix& hb) {
  check_pair(ha, hb);
  const double nb = frobenius_norm(hb);
  if (nb == 0.0) throw NumericalError("procrustes_fit: degenerate HB");
  // M = HB^T HA (b x a); with M = U S Vt the optimal R^T is U Vt.
  const SvdResult s = svd(matmul_tn(hb, ha));
  const Matrix rt = s.U * s.Vt;
  ProcrustesResult out;
  out.r = rt.transpose();
  const Matrix hbr = hb * rt;
  double ts = 0.0;
  for (double x : s.S) ts += x;
  out.c0 = ts / frobenius_sq(hbr);
  const double na = frobenius_norm(ha);
  const Matrix diff = ha - hbr * out.c0;
  out.residual = na > 0.0 ? frobenius_norm(diff) / na : frobenius_norm(diff);
  return out;
}

}  // namespace entropic
