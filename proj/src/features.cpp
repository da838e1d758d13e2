#include "rkg/features.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "rkg/errors.h"

namespace rkg {

Matrix load_features(const std::filesystem::path& path, const KnowledgeGraph& g) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  std::istringstream header(line);
  long rows = -1, dim = -1;
  if (!(header >> rows >> dim) || rows < 0 || dim < 1) {
    throw ParseError(path.string(), 1, "header must be '<rows> <dim>'");
  }
  if (static_cast<std::size_t>(rows) != g.num_entities()) {
    throw ShapeError(path.string() + ": " + std::to_string(rows) + " feature rows for " +
                     std::to_string(g.num_entities()) + " entities");
  }
  Matrix x(rows, dim);
  for (long i = 0; i < rows; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line)) throw ParseError(path.string(), line_no, "missing feature row");
    std::istringstream fields(line);
    std::string tok;
    long j = 0;
    while (fields >> tok) {
      if (j >= dim) throw ParseError(path.string(), line_no, "too many values");
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::out_of_range&) {
        v = std::numeric_limits<double>::infinity();
      } catch (const std::invalid_argument&) {
        throw ParseError(path.string(), line_no, "not a number: '" + tok + "'");
      }
      if (!std::isfinite(v)) throw ValueError(path.string() + ":" + std::to_string(line_no) + ": non-finite value");
      x(i, j++) = v;
    }
    if (j != dim) throw ParseError(path.string(), line_no, "expected " + std::to_string(dim) + " values");
  }
  return x;
}

void write_features(const Matrix& x, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << x.rows() << ' ' << x.cols() << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? " " : "") << x(i, j);
    out << '\n';
  }
}

Matrix random_features(std::size_t rows, std::size_t dim, std::uint64_t seed, double scale) {
  Rng rng(seed);
  EmbeddingTable t;
  t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  t.init_scale = scale;
  t.reinitialize(rng);
  return t.values;
}

}  // namespace rkg
