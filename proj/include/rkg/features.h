#pragma once

#include <filesystem>

#include "rkg/graph.h"
#include "rkg/model.h"

namespace rkg {

// Text format: header "rows dim", then one row of `dim` reals per entity id.
Matrix load_features(const std::filesystem::path& path, const KnowledgeGraph& g);
void write_features(const Matrix& x, const std::filesystem::path& path);

// Frozen N(0, scale^2) features drawn from `seed`.
Matrix random_features(std::size_t rows, std::size_t dim, std::uint64_t seed, double scale = 0.02);

}  // namespace rkg
