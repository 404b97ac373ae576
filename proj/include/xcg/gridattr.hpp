#pragma once

#include "xcg/cellgraph.hpp"
#include "xcg/lrp.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace xcg {

/// Square tiling of a spot. The shift set is {0, .., m-1}^2 * stride with
/// m = tile / stride, which must be a positive integer.
struct GridSpec {
    double tile_mm = 0.05;
    double stride_mm = 0.025;

    std::int32_t shifts_per_axis() const;
};

void validate(const GridSpec& spec);

struct Origin {
    double x_mm = 0.0;
    double y_mm = 0.0;
};

/// Minimum x and y over the cells.
Origin grid_origin(std::span<const Cell> cells);

struct Shift {
    double dx_mm = 0.0;
    double dy_mm = 0.0;
};

std::vector<Shift> grid_shifts(const GridSpec& spec);

struct Tile {
    std::int64_t ix = 0;
    std::int64_t iy = 0;
    std::vector<std::int32_t> cells;  // node indices, ascending
};

/// Cell (x, y) goes to tile (floor((x - x0 + dx) / t), floor((y - y0 + dy) / t)).
/// Tiles come back ordered by (ix, iy); empty tiles are omitted.
std::vector<Tile> partition(std::span<const Cell> cells, const GridSpec& spec, Origin origin,
                            Shift shift);

using TileScorer = std::function<double(std::span<const std::int32_t>)>;

/// For every shift, each nonempty tile T scores scorer(T) / |T| and all of its
/// cells take that score; the result is the per-cell mean over shifts.
/// Scores are evaluated on up to `threads` workers and reduced in tile order.
std::vector<double> shifted_grid_average(std::span<const Cell> cells, const GridSpec& spec,
                                         const TileScorer& scorer, int threads = 1);

struct RelevanceMap {
    std::string graph_id;
    std::vector<std::int64_t> cell_ids;
    std::vector<double> relevance;  // aligned with cell_ids
    GridSpec grid;
    TargetClass target_class = TargetClass::predicted;
    int target_logit = kShortLogit;
};

/// Shifted-grid heatmap with tile scores R(tile) from subgraph_relevance.
RelevanceMap grid_attribution(const LrpTrace& trace, const GridSpec& spec, int threads = 1);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Default rendering interval per explained class.
Interval default_interval(int target_logit);

/// Clip to [lo, hi] and map affinely to [0, 1].
double normalize(double value, Interval interval);

struct Raster {
    std::int32_t width = 0;
    std::int32_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, row 0 at the largest y
};

/// One pixel per stride cell over the spot extent; a pixel is the mean
/// normalized value of the cells it contains, 0 where it holds no cell.
Raster render(const RelevanceMap& map, const CellGraph& graph, Interval interval);

/// Binary PGM (P5) encoding.
std::string encode_pgm(const Raster& raster);

}  // namespace xcg
