#include "tim/interval_encoder.hpp"

#include <stdexcept>

namespace tim {

IntervalVariant interval_variant_from_string(const std::string& s) {
  if (s == "interval-cat") return IntervalVariant::kIntervalCat;
  if (s == "interval-add") return IntervalVariant::kIntervalAdd;
  if (s == "separate-cat") return IntervalVariant::kSeparateCat;
  if (s == "separate-add") return IntervalVariant::kSeparateAdd;
  if (s == "centre") return IntervalVariant::kCentre;
  throw std::invalid_argument("unknown interval encoding variant: " + s);
}

std::string to_string(IntervalVariant v) {
  switch (v) {
    case IntervalVariant::kIntervalCat: return "interval-cat";
    case IntervalVariant::kIntervalAdd: return "interval-add";
    case IntervalVariant::kSeparateCat: return "separate-cat";
    case IntervalVariant::kSeparateAdd: return "separate-add";
    case IntervalVariant::kCentre: return "centre";
  }
  throw std::logic_error("bad variant");
}

namespace {

std::vector<nn::Linear> make_stack(const std::string& name, int in, int hidden,
                                   int out, Rng& rng) {
  std::vector<nn::Linear> stack;
  stack.emplace_back(name + ".fc1", in, hidden, rng);
  stack.emplace_back(name + ".fc2", hidden, hidden, rng);
  stack.emplace_back(name + ".fc3", hidden, out, rng);
  return stack;
}

}  // namespace

IntervalEncoder::IntervalEncoder(IntervalVariant v, int d, int h, Rng& rng)
    : variant(v), dim(d), hidden(h) {
  if (d <= 0 || h <= 0)
    throw std::invalid_argument("interval encoder dims must be positive");
  switch (variant) {
    case IntervalVariant::kIntervalCat:
    case IntervalVariant::kIntervalAdd:
      stack_a = make_stack("time_mlp", 2, h, d, rng);
      break;
    case IntervalVariant::kSeparateCat:
      if (d % 2 != 0)
        throw std::invalid_argument("separate-cat needs an even dimension");
      stack_a = make_stack("time_mlp.start", 1, h, d / 2, rng);
      stack_b = make_stack("time_mlp.end", 1, h, d / 2, rng);
      break;
    case IntervalVariant::kSeparateAdd:
      stack_a = make_stack("time_mlp.start", 1, h, d, rng);
      stack_b = make_stack("time_mlp.end", 1, h, d, rng);
      break;
    case IntervalVariant::kCentre:
      stack_a = make_stack("time_mlp", 1, h, d, rng);
      break;
  }
  norm = nn::LayerNorm("time_mlp.norm", d);
}

nn::Var IntervalEncoder::run_stack(const std::vector<nn::Linear>& stack,
                                   nn::Var x, bool row_stable) const {
  nn::Var h = stack[0].forward(x, row_stable);
  h = ad::relu(h);
  h = stack[1].forward(h, row_stable);
  h = ad::relu(h);
  return stack[2].forward(h, row_stable);
}

nn::Var IntervalEncoder::encode_raw(nn::Var raw, bool row_stable) const {
  if (raw.cols() != 2)
    throw std::invalid_argument("interval input must be n x 2");
  nn::Var out;
  switch (variant) {
    case IntervalVariant::kIntervalCat:
    case IntervalVariant::kIntervalAdd:
      out = run_stack(stack_a, raw, row_stable);
      break;
    case IntervalVariant::kSeparateCat:
      out = ad::concat_cols(
          run_stack(stack_a, ad::slice_cols(raw, 0, 1), row_stable),
          run_stack(stack_b, ad::slice_cols(raw, 1, 1), row_stable));
      break;
    case IntervalVariant::kSeparateAdd:
      out = ad::add(
          run_stack(stack_a, ad::slice_cols(raw, 0, 1), row_stable),
          run_stack(stack_b, ad::slice_cols(raw, 1, 1), row_stable));
      break;
    case IntervalVariant::kCentre: {
      nn::Var centre = ad::scalar_mul(
          ad::add(ad::slice_cols(raw, 0, 1), ad::slice_cols(raw, 1, 1)), 0.5);
      out = run_stack(stack_a, centre, row_stable);
      break;
    }
  }
  return norm(out);
}

nn::Var IntervalEncoder::encode(nn::Tape& tape,
                                const std::vector<NormalizedInterval>& ts,
                                bool row_stable) const {
  return encode_raw(tape.constant(intervals_to_matrix(ts)), row_stable);
}

Mat IntervalEncoder::encode_values(
    const std::vector<NormalizedInterval>& ts) const {
  if (ts.empty()) return Mat(0, dim);
  nn::Tape tape;
  return encode(tape, ts, /*row_stable=*/true).val();
}

Vec IntervalEncoder::encode_one(const NormalizedInterval& t) const {
  return encode_values({t}).row(0).transpose();
}

void IntervalEncoder::collect(std::vector<nn::Parameter*>& out) {
  for (auto& l : stack_a) l.collect(out);
  for (auto& l : stack_b) l.collect(out);
  norm.collect(out);
}

Mat intervals_to_matrix(const std::vector<NormalizedInterval>& ts) {
  Mat m(static_cast<Index>(ts.size()), 2);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    m(static_cast<Index>(i), 0) = ts[i].start;
    m(static_cast<Index>(i), 1) = ts[i].end;
  }
  return m;
}

}  // namespace tim
