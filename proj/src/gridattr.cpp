#include "xcg/gridattr.hpp"

#include "xcg/error.hpp"
#include "xcg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace xcg {

std::int32_t GridSpec::shifts_per_axis() const {
    return static_cast<std::int32_t>(std::lround(tile_mm / stride_mm));
}

void validate(const GridSpec& spec) {
    require(std::isfinite(spec.tile_mm) && std::isfinite(spec.stride_mm) && spec.stride_mm > 0.0 &&
                spec.stride_mm <= spec.tile_mm,
            "precondition", "grid needs 0 < stride <= tile");
    const double ratio = spec.tile_mm / spec.stride_mm;
    require(std::abs(ratio - std::round(ratio)) <= 1e-9 * ratio, "precondition",
            "tile / stride must be a positive integer");
}

Origin grid_origin(std::span<const Cell> cells) {
    require(!cells.empty(), "precondition", "grid origin of an empty cell set");
    Origin o{cells.front().x_mm, cells.front().y_mm};
    for (const auto& c : cells) {
        o.x_mm = std::min(o.x_mm, c.x_mm);
        o.y_mm = std::min(o.y_mm, c.y_mm);
    }
    return o;
}

std::vector<Shift> grid_shifts(const GridSpec& spec) {
    validate(spec);
    const auto m = spec.shifts_per_axis();
    std::vector<Shift> out;
    for (std::int32_t i = 0; i < m; ++i) {
        for (std::int32_t j = 0; j < m; ++j) out.push_back({i * spec.stride_mm, j * spec.stride_mm});
    }
    return out;
}

std::vector<Tile> partition(std::span<const Cell> cells, const GridSpec& spec, Origin origin,
                            Shift shift) {
    validate(spec);
    require(shift.dx_mm >= 0.0 && shift.dx_mm < spec.tile_mm && shift.dy_mm >= 0.0 &&
                shift.dy_mm < spec.tile_mm,
            "precondition", "grid shift must lie in [0, tile)");
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::int32_t>> tiles;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto ix = static_cast<std::int64_t>(std::floor((cells[i].x_mm - origin.x_mm + shift.dx_mm) / spec.tile_mm));
        const auto iy = static_cast<std::int64_t>(std::floor((cells[i].y_mm - origin.y_mm + shift.dy_mm) / spec.tile_mm));
        tiles[{ix, iy}].push_back(static_cast<std::int32_t>(i));
    }
    std::vector<Tile> out;
    out.reserve(tiles.size());
    for (auto& [key, members] : tiles) out.push_back({key.first, key.second, std::move(members)});
    return out;
}

std::vector<double> shifted_grid_average(std::span<const Cell> cells, const GridSpec& spec,
                                         const TileScorer& scorer, int threads) {
    const auto origin = grid_origin(cells);
    const auto shifts = grid_shifts(spec);

    std::vector<Tile> tiles;
    std::vector<std::size_t> shift_end;  // tiles of shift s end at shift_end[s]
    for (const auto& shift : shifts) {
        auto part = partition(cells, spec, origin, shift);
        std::move(part.begin(), part.end(), std::back_inserter(tiles));
        shift_end.push_back(tiles.size());
    }
    std::vector<double> scores(tiles.size());
    parallel_for(tiles.size(), threads, [&](std::size_t t) {
        scores[t] = scorer(tiles[t].cells) / static_cast<double>(tiles[t].cells.size());
    });

    // Mean over shifts as first + sum(v - first) / m^2: a constant field is
    // reproduced exactly.
    std::vector<double> first(cells.size(), 0.0);
    std::vector<double> deviation(cells.size(), 0.0);
    std::size_t t = 0;
    for (std::size_t s = 0; s < shifts.size(); ++s) {
        for (; t < shift_end[s]; ++t) {
            for (auto c : tiles[t].cells) {
                if (s == 0) {
                    first[static_cast<std::size_t>(c)] = scores[t];
                } else {
                    deviation[static_cast<std::size_t>(c)] += scores[t] - first[static_cast<std::size_t>(c)];
                }
            }
        }
    }
    const auto n_shifts = static_cast<double>(shifts.size());
    std::vector<double> out(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) out[c] = first[c] + deviation[c] / n_shifts;
    return out;
}

RelevanceMap grid_attribution(const LrpTrace& trace, const GridSpec& spec, int threads) {
    const auto& graph = *trace.graph;
    RelevanceMap map;
    map.graph_id = graph.graph_id;
    map.grid = spec;
    map.target_class = trace.config.target;
    map.target_logit = trace.target_logit;
    for (const auto& c : graph.cells) map.cell_ids.push_back(c.cell_id);
    map.relevance = shifted_grid_average(
        graph.cells, spec,
        [&](std::span<const std::int32_t> tile) { return subgraph_relevance(trace, tile); },
        threads);
    return map;
}

Interval default_interval(int target_logit) {
    return target_logit == kShortLogit ? Interval{-0.02, 0.02} : Interval{-0.03, 0.08};
}

double normalize(double value, Interval interval) {
    require(interval.lo < interval.hi, "precondition", "degenerate rendering interval");
    const double v = (std::clamp(value, interval.lo, interval.hi) - interval.lo) / (interval.hi - interval.lo);
    return v;
}

Raster render(const RelevanceMap& map, const CellGraph& graph, Interval interval) {
    require(interval.lo < interval.hi, "precondition", "degenerate rendering interval");
    require(map.relevance.size() == graph.cells.size(), "precondition",
            "relevance map does not match graph " + graph.graph_id);
    validate(map.grid);
    const auto origin = grid_origin(graph.cells);
    double max_x = origin.x_mm;
    double max_y = origin.y_mm;
    for (const auto& c : graph.cells) {
        max_x = std::max(max_x, c.x_mm);
        max_y = std::max(max_y, c.y_mm);
    }
    const double s = map.grid.stride_mm;
    Raster r;
    r.width = std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil((max_x - origin.x_mm) / s)));
    r.height = std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil((max_y - origin.y_mm) / s)));
    const auto n_pixels = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height);
    std::vector<double> sum(n_pixels, 0.0);
    std::vector<std::int32_t> count(n_pixels, 0);
    for (std::size_t i = 0; i < graph.cells.size(); ++i) {
        const auto& c = graph.cells[i];
        const auto px = std::min<std::int32_t>(r.width - 1, static_cast<std::int32_t>(std::floor((c.x_mm - origin.x_mm) / s)));
        const auto py = std::min<std::int32_t>(r.height - 1, static_cast<std::int32_t>(std::floor((c.y_mm - origin.y_mm) / s)));
        const auto row = r.height - 1 - py;
        const auto p = static_cast<std::size_t>(row) * static_cast<std::size_t>(r.width) + static_cast<std::size_t>(px);
        sum[p] += normalize(map.relevance[i], interval);
        ++count[p];
    }
    r.pixels.resize(n_pixels, 0);
    for (std::size_t p = 0; p < n_pixels; ++p) {
        if (count[p] > 0) r.pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * sum[p] / count[p]));
    }
    return r;
}

std::string encode_pgm(const Raster& raster) {
    std::string out = "P5\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
    out.append(raster.pixels.begin(), raster.pixels.end());
    return out;
}

}  // namespace xcg
