#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "episteme/rng.hpp"

namespace episteme {

/// Class-conditional observation table. Modality m sees class c at
/// (s, 0, ..., 0) with s = +1 when c + m >= class_count - 1 and -1 otherwise,
/// so each modality confuses a different run of adjacent classes and the
/// joint view separates all of them. With 3 classes and 2 modalities:
/// modality 0 maps classes {0,1} to -1 and {2} to +1, modality 1 maps {0}
/// to -1 and {1,2} to +1.
inline std::vector<double> class_mean(std::size_t modality,
                                      std::size_t class_id,
                                      std::size_t class_count,
                                      std::size_t dim) {
  if (class_id >= class_count) {
    throw std::invalid_argument("class_mean: class out of range");
  }
  if (dim == 0) throw std::invalid_argument("class_mean: zero dimension");
  std::vector<double> mean(dim, 0.0);
  mean[0] = (class_id + modality >= class_count - 1) ? 1.0 : -1.0;
  return mean;
}

inline std::vector<double> sample_class_observation(
    std::size_t modality, std::size_t class_id, std::size_t class_count,
    std::size_t dim, double sigma_obs, Rng& rng) {
  std::vector<double> obs = class_mean(modality, class_id, class_count, dim);
  if (sigma_obs > 0.0) {
    for (double& v : obs) v += sigma_obs * rng.normal();
  }
  return obs;
}

}  // namespace episteme
