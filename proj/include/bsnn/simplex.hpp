#pragma once

#include "bsnn/linalg.hpp"

namespace bsnn::lp {

struct LpResult {
  double objective = 0;
  linalg::Vector x;
};

// maximize c.x  s.t.  A x <= b, x >= 0, with b >= 0 (the origin is feasible).
// Dense tableau simplex with Bland's rule. Throws NumericalFailure if the
// problem is unbounded.
LpResult maximize(const linalg::Matrix& a, const linalg::Vector& b, const linalg::Vector& c);

}  // namespace bsnn::lp
