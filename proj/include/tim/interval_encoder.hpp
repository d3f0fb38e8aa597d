#pragma once

#include <string>
#include <vector>

#include "tim/interval.hpp"
#include "tim/nn.hpp"

namespace tim {

/// How an interval is turned into a D-vector and how that vector joins a
/// token: the joint (start, end) encoders, per-endpoint encoders, or the
/// midpoint-only baseline. *Cat variants are concatenated to tokens; *Add
/// variants are summed into them.
enum class IntervalVariant {
  kIntervalCat,  // default: encode (start, end) jointly, concatenate
  kIntervalAdd,
  kSeparateCat,
  kSeparateAdd,
  kCentre,
};

IntervalVariant interval_variant_from_string(const std::string& s);
std::string to_string(IntervalVariant v);

/// Shared MLP mapping window-normalized intervals to D-vectors. One
/// instance encodes every feature and query interval of every modality;
/// parameters are immutable during inference, so concurrent encode calls
/// are safe.
struct IntervalEncoder {
  IntervalVariant variant = IntervalVariant::kIntervalCat;
  int dim = 0;     // output dimension D
  int hidden = 0;  // hidden width of each linear stack
  std::vector<nn::Linear> stack_a;  // joint / start / centre stack
  std::vector<nn::Linear> stack_b;  // end stack ("separate" variants)
  nn::LayerNorm norm;               // after the final layer

  IntervalEncoder() = default;
  IntervalEncoder(IntervalVariant v, int dim, int hidden, Rng& rng);

  /// Encode from a raw n x 2 (start, end) matrix already on a tape, so
  /// gradients with respect to the interval itself are available.
  /// row_stable keeps each row's encoding independent of the batch size
  /// (used for query intervals, whose count varies per window).
  nn::Var encode_raw(nn::Var raw, bool row_stable = false) const;

  nn::Var encode(nn::Tape& tape, const std::vector<NormalizedInterval>& ts,
                 bool row_stable = false) const;

  /// Eval-mode convenience: encode a batch to plain values.
  Mat encode_values(const std::vector<NormalizedInterval>& ts) const;

  /// Eval-mode convenience for a single interval.
  Vec encode_one(const NormalizedInterval& t) const;

  /// True when the encoding joins tokens by concatenation (token width
  /// 2D); false for the *-add variants (token width D).
  bool concat_consumed() const {
    return variant != IntervalVariant::kIntervalAdd &&
           variant != IntervalVariant::kSeparateAdd;
  }

  void collect(std::vector<nn::Parameter*>& out);

 private:
  nn::Var run_stack(const std::vector<nn::Linear>& stack, nn::Var x,
                    bool row_stable) const;
};

Mat intervals_to_matrix(const std::vector<NormalizedInterval>& ts);

}  // namespace tim
