#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tim {

/// Absolute [start, end] in seconds within an untrimmed video.
struct TimeInterval {
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }
  double centre() const { return 0.5 * (start_s + end_s); }

  bool operator==(const TimeInterval&) const = default;
};

inline TimeInterval make_interval(double start_s, double end_s) {
  if (!(std::isfinite(start_s) && std::isfinite(end_s)))
    throw std::invalid_argument("interval endpoints must be finite");
  if (start_s < 0.0 || end_s < 0.0)
    throw std::invalid_argument("interval endpoints must be >= 0");
  if (start_s > end_s)
    throw std::invalid_argument("interval start must be <= end");
  return TimeInterval{start_s, end_s};
}

/// Window-relative interval; after clipping to the window both endpoints
/// lie in [0, 1].
struct NormalizedInterval {
  double start = 0.0;
  double end = 0.0;

  double duration() const { return end - start; }
  double centre() const { return 0.5 * (start + end); }

  bool operator==(const NormalizedInterval&) const = default;
};

/// Map an absolute interval into window coordinates. Pure linear map; no
/// clipping is applied here.
inline NormalizedInterval normalize_interval(const TimeInterval& t,
                                             double window_start,
                                             double window_length) {
  if (!(window_length > 0.0))
    throw std::invalid_argument("window_length must be > 0");
  return NormalizedInterval{(t.start_s - window_start) / window_length,
                            (t.end_s - window_start) / window_length};
}

template <typename S>
S span_overlap(S a_start, S a_end, S b_start, S b_end) {
  const S lo = std::max(a_start, b_start);
  const S hi = std::min(a_end, b_end);
  return hi > lo ? hi - lo : S(0);
}

/// 1-D intersection-over-union. Disjoint spans give 0; a pair of
/// zero-length spans gives 0 as well.
template <typename S>
S span_iou(S a_start, S a_end, S b_start, S b_end) {
  const S inter = span_overlap(a_start, a_end, b_start, b_end);
  const S uni = (a_end - a_start) + (b_end - b_start) - inter;
  if (!(uni > S(0))) return S(0);
  return inter / uni;
}

inline double temporal_iou(const TimeInterval& a, const TimeInterval& b) {
  return span_iou(a.start_s, a.end_s, b.start_s, b.end_s);
}

inline double temporal_iou(const NormalizedInterval& a,
                           const NormalizedInterval& b) {
  return span_iou(a.start, a.end, b.start, b.end);
}

}  // namespace tim
