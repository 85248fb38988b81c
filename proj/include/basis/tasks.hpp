#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "basis/core.hpp"

namespace basis {

/// The linear map g relating components to a mixture.
///
/// LinearSum:        m = sum_i alpha_i x_i          (k = alpha.size())
/// ChannelCollapse:  m = (x_r + x_g + x_b) / 3      (k = 1, component [3,...], mixture [1,...])
class MixingOperator {
 public:
  enum class Kind { LinearSum, ChannelCollapse };

  static MixingOperator linear_sum(std::vector<double> alpha, Shape component_shape) {
    require(!alpha.empty(), Errc::invalid_argument, "linear mixing needs k >= 1 coefficients");
    for (double a : alpha)
      require(a != 0.0 && std::isfinite(a), Errc::invalid_argument, "mixing coefficients must be finite and non-zero");
    MixingOperator op;
    op.kind_ = Kind::LinearSum;
    op.alpha_ = std::move(alpha);
    op.output_shape_ = component_shape;
    op.component_shape_ = std::move(component_shape);
    return op;
  }

  /// alpha_i = 1/k for all i.
  static MixingOperator equal_mix(std::size_t k, Shape component_shape) {
    require(k >= 1, Errc::invalid_argument, "k must be >= 1");
    return linear_sum(std::vector<double>(k, 1.0 / static_cast<double>(k)), std::move(component_shape));
  }

  static MixingOperator channel_collapse(Shape component_shape) {
    require(component_shape.rank() >= 2 && component_shape[0] == 3, Errc::invalid_argument,
            "channel collapse needs a component shape with exactly 3 leading channels, got " +
                component_shape.str());
    MixingOperator op;
    op.kind_ = Kind::ChannelCollapse;
    op.alpha_ = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    std::vector<std::size_t> out = component_shape.dims();
    out[0] = 1;
    op.output_shape_ = Shape(std::move(out));
    op.component_shape_ = std::move(component_shape);
    return op;
  }

  Kind kind() const { return kind_; }
  std::size_t k() const { return kind_ == Kind::LinearSum ? alpha_.size() : 1; }
  const std::vector<double>& alpha() const { return alpha_; }
  const Shape& component_shape() const { return component_shape_; }
  const Shape& output_shape() const { return output_shape_; }

  /// Sum of squared coefficients acting on each output element.
  double alpha_squared_sum() const {
    double s = 0.0;
    for (double a : alpha_) s += a * a;
    return s;
  }

  bool equal_coefficients() const {
    return std::all_of(alpha_.begin(), alpha_.end(), [&](double a) { return a == alpha_.front(); });
  }

  void check_components(const ComponentSet& x) const {
    require(x.size() == k(), Errc::invalid_argument,
            "operator expects " + std::to_string(k()) + " components, got " + std::to_string(x.size()));
    for (const auto& c : x)
      require(c.shape() == component_shape_, Errc::invalid_argument,
              "component shape " + c.shape().str() + " does not match operator shape " + component_shape_.str());
  }

  void check_mixture(const Signal& m) const {
    require(m.shape() == output_shape_, Errc::invalid_argument,
            "mixture shape " + m.shape().str() + " does not match operator output " + output_shape_.str());
  }

  Signal apply(const ComponentSet& x) const {
    check_components(x);
    Signal out(output_shape_);
    auto o = out.data();
    if (kind_ == Kind::LinearSum) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto xi = x[i].data();
        for (std::size_t p = 0; p < o.size(); ++p) o[p] += alpha_[i] * xi[p];
      }
    } else {
      const std::size_t plane = o.size();
      auto xi = x[0].data();
      for (std::size_t p = 0; p < plane; ++p) o[p] = (xi[p] + xi[plane + p] + xi[2 * plane + p]) / 3.0;
    }
    return out;
  }

  /// G^T r: maps a mixture-space signal back onto the components.
  ComponentSet adjoint(const Signal& r) const {
    check_mixture(r);
    ComponentSet out;
    if (kind_ == Kind::LinearSum) {
      out.reserve(alpha_.size());
      for (double a : alpha_) out.push_back(a * r);
    } else {
      Signal c(component_shape_);
      auto cv = c.data();
      auto rv = r.data();
      const std::size_t plane = rv.size();
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t p = 0; p < plane; ++p) cv[ch * plane + p] = rv[p] / 3.0;
      out.push_back(std::move(c));
    }
    return out;
  }

 private:
  MixingOperator() = default;

  Kind kind_ = Kind::LinearSum;
  std::vector<double> alpha_;
  Shape component_shape_;
  Shape output_shape_;
};

inline Signal mix(const ComponentSet& components, const MixingOperator& op) { return op.apply(components); }

/// Every component set to m/(k alpha), so the prediction reconstructs m exactly.
inline ComponentSet average_baseline(const Signal& m, const MixingOperator& op) {
  require(op.kind() == MixingOperator::Kind::LinearSum && op.equal_coefficients(), Errc::unsupported_operator,
          "average baseline needs a linear mixture with equal coefficients");
  op.check_mixture(m);
  const double scale = 1.0 / (static_cast<double>(op.k()) * op.alpha().front());
  return ComponentSet(op.k(), scale * m);
}

/// Repeats a single-channel image across three channels.
inline Signal broadcast_channels(const Signal& gray) {
  const auto& dims = gray.shape().dims();
  require(dims.size() >= 2 && dims[0] == 1, Errc::invalid_argument, "expected a single-channel image");
  std::vector<std::size_t> out_dims = dims;
  out_dims[0] = 3;
  Signal out{Shape(out_dims)};
  const std::size_t plane = gray.size();
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = gray[p];
  return out;
}

struct LabeledSignal {
  Signal signal;
  int label = -1;
};

struct Pairing {
  enum class Kind { ClassAgnostic, ClassSplit };
  Kind kind = Kind::ClassAgnostic;
  std::vector<std::vector<int>> groups;  // label groups, one component per group

  static Pairing agnostic() { return {}; }
  static Pairing split(std::vector<std::vector<int>> groups) { return {Kind::ClassSplit, std::move(groups)}; }
};

struct MixtureCase {
  Signal mixture;
  ComponentSet ground_truth;
  std::vector<std::size_t> source_indices;
  Pairing::Kind pairing = Pairing::Kind::ClassAgnostic;
};

/// Draws `count` mixtures. Class-agnostic cases take k distinct indices
/// uniformly; class-split cases take one image from each label group.
inline std::vector<MixtureCase> make_mixture_set(const std::vector<LabeledSignal>& dataset, std::size_t count,
                                                 const Pairing& pairing, const MixingOperator& op,
                                                 std::uint64_t seed) {
  require(op.kind() == MixingOperator::Kind::LinearSum, Errc::unsupported_operator,
          "mixture sets are built from linear mixtures");
  const std::size_t k = op.k();
  require(!dataset.empty(), Errc::invalid_argument, "dataset is empty");
  for (const auto& item : dataset)
    require(item.signal.shape() == op.component_shape(), Errc::invalid_argument, "dataset shape mismatch");

  std::vector<std::vector<std::size_t>> pools;
  if (pairing.kind == Pairing::Kind::ClassSplit) {
    require(pairing.groups.size() == k, Errc::invalid_argument, "class split needs one label group per component");
    for (const auto& group : pairing.groups) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < dataset.size(); ++i)
        if (std::find(group.begin(), group.end(), dataset[i].label) != group.end()) pool.push_back(i);
      require(!pool.empty(), Errc::invalid_argument, "label group has no members in the dataset");
      pools.push_back(std::move(pool));
    }
  } else {
    require(dataset.size() >= k, Errc::invalid_argument, "dataset smaller than k");
  }

  RngStream root(seed);
  std::vector<MixtureCase> cases;
  cases.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    RngStream rng = root.substream(c);
    std::vector<std::size_t> idx;
    if (pairing.kind == Pairing::Kind::ClassSplit) {
      for (const auto& pool : pools) idx.push_back(pool[rng.below(pool.size())]);
    } else {
      while (idx.size() < k) {
        const std::size_t i = rng.below(dataset.size());
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
      }
    }
    MixtureCase mc;
    for (std::size_t i : idx) mc.ground_truth.push_back(dataset[i].signal);
    mc.mixture = op.apply(mc.ground_truth);
    mc.source_indices = std::move(idx);
    mc.pairing = pairing.kind;
    cases.push_back(std::move(mc));
  }
  return cases;
}

}  // namespace basis
