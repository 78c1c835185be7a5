#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "seqforge/core/random.hpp"
#include "seqforge/tensor/tensor.hpp"

namespace seqforge {

/// A named, replaceable leaf the checker perturbs in place.
template <typename T>
struct GradCheckSlot {
  std::string name;
  Tensor<T>* value;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every entry; otherwise a seeded random subset per slot.
  std::size_t max_entries_per_slot = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0;
  std::string worst_slot;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of `loss` against central differences.
/// The error per entry is |g_ad - g_fd| / max(1, |g_ad| + |g_fd|). `loss`
/// must be deterministic: any stochastic draws have to be re-seeded on every
/// call.
template <typename T>
GradCheckReport gradient_check(const std::function<Tensor<T>()>& loss,
                               const std::vector<GradCheckSlot<T>>& slots,
                               const GradCheckOptions& options = {}) {
  for (const auto& slot : slots) slot.value->set_requires_grad(true);

  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    auto scope = tape.activate();
    const Tensor<T> root = loss();
    if (!std::isfinite(static_cast<double>(root.item())))
      throw ContractError("gradient_check: loss is not finite");
    const auto grads = tape.backward(root);
    for (const auto& slot : slots) analytic.push_back(grads.of(*slot.value).vec());
  }

  const auto evaluate = [&]() {
    auto pause = Tape<T>::pause();
    return static_cast<double>(loss().item());
  };

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Tensor<T>& slot = *slots[s].value;
    const Tensor<T> original = slot;
    std::vector<std::size_t> entries(original.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_slot && entries.size() > options.max_entries_per_slot) {
      rng.shuffle(entries.begin(), entries.end());
      entries.resize(options.max_entries_per_slot);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      std::vector<T> probe = original.vec();
      probe[i] = original[i] + static_cast<T>(options.eps);
      slot = Tensor<T>::variable(original.shape(), probe);
      const double up = evaluate();
      probe[i] = original[i] - static_cast<T>(options.eps);
      slot = Tensor<T>::variable(original.shape(), probe);
      const double down = evaluate();
      slot = original;
      const double fd = (up - down) / (2 * options.eps);
      const double ad = static_cast<double>(analytic[s][i]);
      if (!std::isfinite(fd) || !std::isfinite(ad))
        throw ContractError("gradient_check: non-finite gradient for " + slots[s].name + "[" +
                            std::to_string(i) + "]");
      const double err = std::abs(ad - fd) / std::max(1.0, std::abs(ad) + std::abs(fd));
      ++report.entries_checked;
      if (err > report.max_relative_error || report.worst_slot.empty()) {
        if (err >= report.max_relative_error) {
          report.max_relative_error = err;
          report.worst_slot = slots[s].name;
          report.worst_index = i;
        }
      }
    }
  }
  return report;
}

}  // namespace seqforge
