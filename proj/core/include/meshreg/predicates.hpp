#pragma once

#include "meshreg/grid.hpp"

namespace meshreg {

/// Sign of the orientation determinant: +1 if a, b, c turn counterclockwise,
/// -1 clockwise, 0 collinear. Exact: a floating-point filter decides the easy
/// cases and rational arithmetic decides the rest.
int orient2d(const Point2& a, const Point2& b, const Point2& c);

/// Sign of the in-circle determinant: +1 if d lies strictly inside the
/// circumcircle of the counterclockwise triangle (a, b, c), -1 outside,
/// 0 cocircular. Exact in the same way as orient2d.
int incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

/// In-circle determinant divided by its permanent (sum of term magnitudes).
/// Dimensionless, in [-1, 1]; used for tolerance-based Delaunay audits.
double incircle_normalized(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

/// Signed doubled area (b - a) x (c - a) in plain floating point.
inline double cross(const Point2& a, const Point2& b, const Point2& c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

}  // namespace meshreg
