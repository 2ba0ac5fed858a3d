#ifndef DYNROUTE_MADDS_COUNTER_HPP_
#define DYNROUTE_MADDS_COUNTER_HPP_

#include <array>
#include <cstdint>

namespace dynroute::madds {

// Which part of the network an executed multiply-accumulate belongs to.
enum class Category : int { kOther = 0, kStem, kRoutable, kRouter, kHead, kCount };

// Thread-local tally of multiply-accumulates actually executed by the
// convolution and dense kernels. Counts are taken inside the kernels' inner
// loops, independently of any closed-form cost formula.
struct Tally {
  std::array<std::int64_t, static_cast<int>(Category::kCount)> by_category{};
  Category current = Category::kOther;

  std::int64_t operator[](Category c) const {
    return by_category[static_cast<int>(c)];
  }
  void reset() { by_category.fill(0); }
};

Tally& local_tally();

inline void add(std::int64_t n) {
  Tally& t = local_tally();
  t.by_category[static_cast<int>(t.current)] += n;
}

// Attributes kernel work in its lifetime to `c`.
class CategoryScope {
 public:
  explicit CategoryScope(Category c) : saved_(local_tally().current) {
    local_tally().current = c;
  }
  ~CategoryScope() { local_tally().current = saved_; }
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  Category saved_;
};

}  // namespace dynroute::madds

#endif  // DYNROUTE_MADDS_COUNTER_HPP_
