#pragma once

#include <stdexcept>
#include <string>

namespace popmap {

/// Tensor or raster dimensions that do not fit together.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An object used before it was ready (untrained model, missing running stats, missing grad).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data (duplicate stations, misaligned cubes, bad files).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Zone partitions that are empty, non-contiguous or not nested.
struct PartitionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A pipeline stage cannot run: missing prerequisite artifacts, a locked or foreign run directory.
struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace popmap
