#pragma once
// Pixelwise regression baselines: lasso, CART tree, random forest and a small MLP.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "popmap/grid.hpp"

namespace popmap::baselines {

/// Row-major features [rows x width]: co-located coarse density, then the 4 PoI counts.
struct PixelDataset {
  std::size_t width = 1 + kPoiCategories;
  std::vector<double> features;
  std::vector<double> targets;
  bool log_transform = true;
  // where each row came from, for mapping predictions back to cubes
  std::vector<std::size_t> frame;
  std::vector<std::size_t> cell;

  std::size_t rows() const { return targets.size(); }
  const double* row(std::size_t r) const { return features.data() + r * width; }
};

double forward_transform(double x, bool log_transform);
/// Inverse of forward_transform, floored at 0.
double inverse_transform(double y, bool log_transform);

/// Rows for every in-boundary cell of every frame. `fine` may be empty at prediction time
/// (targets are then 0). Throws InputError on misaligned cubes.
PixelDataset build_pixel_dataset(const PopCube& coarse, const PopCube& fine, const PoiGrid& pois,
                                 bool log_transform);

enum class Method { lasso, tree, forest, mlp };
std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct Hyper {
  double lasso_lambda = 1e-3;  // on standardized features
  int lasso_sweeps = 200;
  int tree_max_depth = 20;
  int tree_min_leaf = 100;
  int forest_trees = 100;
  int forest_min_leaf = 2;
  int forest_max_depth = 20;
  std::size_t forest_bootstrap_cap = 20000;
  int mlp_hidden = 64;
  int mlp_iterations = 400;
  int mlp_batch = 256;
  double mlp_lr = 1e-3;
  std::uint64_t seed = 1;
  int threads = 1;  // forest workers
};

/// A fitted regressor in transformed target space.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict(const double* row) const = 0;
};

std::unique_ptr<Regressor> fit(Method method, const PixelDataset& data, const Hyper& hp);

/// Predictions in population units (inverse-transformed, >= 0).
std::vector<double> predict(const Regressor& model, const PixelDataset& data);

/// Fits on `train` and writes predictions for `test` into a cube shaped like `like`.
PopCube fit_predict(Method method, const PixelDataset& train, const PixelDataset& test, const PopCube& like,
                    const Hyper& hp);

}  // namespace popmap::baselines
