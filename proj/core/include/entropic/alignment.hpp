#pragma once

#include "entropic/matrix.hpp"

namespace entropic {

// Cosine similarity between the flattened Gram matrices HA HA^T and HB HB^T.
double gram_alignment(const Matrix& ha, const Matrix& hb);

// Linear CKA, optionally on column-centered representations.
double cka(const Matrix& ha, const Matrix& hb, bool centered = true);

struct ProcrustesResult {
  double c0 = 0.0;
  Matrix r;               // orthonormal columns, HA ~ c0 HB R^T
  double residual = 0.0;  // |HA - c0 HB R^T|_F / |HA|_F
};

ProcrustesResult procrustes_fit(const Matrix& ha, const Matrix& hb);

}  // namespace entropic
