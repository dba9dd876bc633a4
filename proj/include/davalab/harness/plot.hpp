#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "davalab/core/tensor.hpp"

// Static plot output. Plots are written as uncompressed 24-bit BMP images:
// self-contained, no image library needed, and trivially byte-reproducible.
namespace davalab::harness {

struct Color {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline Color mix(Color a, Color b, double t) {
    auto lerp = [t](std::uint8_t x, std::uint8_t y) {
        return static_cast<std::uint8_t>(std::lround(x + (y - x) * t));
    };
    return {lerp(a.r, b.r), lerp(a.g, b.g), lerp(a.b, b.b)};
}

class Canvas {
  public:
    Canvas(int width, int height, Color bg = {255, 255, 255}) : w_(width), h_(height) {
        require(width > 0 && height > 0, "Canvas: dimensions must be positive");
        px_.assign(static_cast<std::size_t>(w_) * h_, bg);
    }

    int width() const { return w_; }
    int height() const { return h_; }

    void set(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        px_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    void fill_rect(int x0, int y0, int x1, int y1, Color c) {
        for (int y = std::max(0, y0); y <= std::min(h_ - 1, y1); ++y)
            for (int x = std::max(0, x0); x <= std::min(w_ - 1, x1); ++x)
                px_[static_cast<std::size_t>(y) * w_ + x] = c;
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
        // Bresenham, all-integer.
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x0 += sx; }
            if (e2 <= dx) { err += dx; y0 += sy; }
        }
    }

    // 3x5 microfont drawn at the given scale; returns the advance width.
    int text(int x, int y, const std::string& s, Color c, int scale = 2) {
        int cx = x;
        for (char ch : s) {
            draw_glyph(cx, y, ch, c, scale);
            cx += 4 * scale;
        }
        return cx - x;
    }

    static int text_width(const std::string& s, int scale = 2) {
        return static_cast<int>(s.size()) * 4 * scale;
    }

    // Writes a bottom-up, 24-bit uncompressed BMP with 4-byte row padding.
    void save_bmp(const std::filesystem::path& path) const {
        const int row_bytes = ((w_ * 3 + 3) / 4) * 4;
        const std::uint32_t pixel_bytes = static_cast<std::uint32_t>(row_bytes) * h_;
        const std::uint32_t file_size = 54 + pixel_bytes;
        std::vector<std::uint8_t> buf(file_size, 0);
        auto put16 = [&](std::size_t at, std::uint16_t v) {
            buf[at] = v & 0xff;
            buf[at + 1] = (v >> 8) & 0xff;
        };
        auto put32 = [&](std::size_t at, std::uint32_t v) {
            for (int i = 0; i < 4; ++i) buf[at + i] = (v >> (8 * i)) & 0xff;
        };
        buf[0] = 'B';
        buf[1] = 'M';
        put32(2, file_size);
        put32(10, 54);          // pixel data offset
        put32(14, 40);          // BITMAPINFOHEADER size
        put32(18, static_cast<std::uint32_t>(w_));
        put32(22, static_cast<std::uint32_t>(h_));
        put16(26, 1);           // planes
        put16(28, 24);          // bits per pixel
        put32(34, pixel_bytes);
        put32(38, 2835);        // 72 dpi
        put32(42, 2835);
        for (int y = 0; y < h_; ++y) {
            const std::size_t row_at = 54 + static_cast<std::size_t>(h_ - 1 - y) * row_bytes;
            for (int x = 0; x < w_; ++x) {
                const Color& c = px_[static_cast<std::size_t>(y) * w_ + x];
                buf[row_at + 3 * x] = c.b;
                buf[row_at + 3 * x + 1] = c.g;
                buf[row_at + 3 * x + 2] = c.r;
            }
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error("short write to " + path.string());
    }

  private:
    void draw_glyph(int x, int y, char ch, Color c, int scale) {
        const std::uint16_t bits = glyph_bits(ch);
        for (int gy = 0; gy < 5; ++gy)
            for (int gx = 0; gx < 3; ++gx)
                if (bits >> (gy * 3 + gx) & 1)
                    fill_rect(x + gx * scale, y + gy * scale, x + (gx + 1) * scale - 1,
                              y + (gy + 1) * scale - 1, c);
    }

    // Each glyph is 3 wide x 5 tall; bit (row*3+col) set means pixel on,
    // row 0 at the top.
    static std::uint16_t glyph_bits(char ch) {
        auto rows = [](int r0, int r1, int r2, int r3, int r4) {
            return static_cast<std::uint16_t>(r0 | (r1 << 3) | (r2 << 6) | (r3 << 9) | (r4 << 12));
        };
        if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
        switch (ch) {
            case '0': return rows(0b111, 0b101, 0b101, 0b101, 0b111);
            case '1': return rows(0b010, 0b110, 0b010, 0b010, 0b111);
            case '2': return rows(0b111, 0b001, 0b111, 0b100, 0b111);
            case '3': return rows(0b111, 0b001, 0b011, 0b001, 0b111);
            case '4': return rows(0b101, 0b101, 0b111, 0b001, 0b001);
            case '5': return rows(0b111, 0b100, 0b111, 0b001, 0b111);
            case '6': return rows(0b111, 0b100, 0b111, 0b101, 0b111);
            case '7': return rows(0b111, 0b001, 0b010, 0b010, 0b010);
            case '8': return rows(0b111, 0b101, 0b111, 0b101, 0b111);
            case '9': return rows(0b111, 0b101, 0b111, 0b001, 0b111);
            case 'A': return rows(0b010, 0b101, 0b111, 0b101, 0b101);
            case 'B': return rows(0b110, 0b101, 0b110, 0b101, 0b110);
            case 'C': return rows(0b011, 0b100, 0b100, 0b100, 0b011);
            case 'D': return rows(0b110, 0b101, 0b101, 0b101, 0b110);
            case 'E': return rows(0b111, 0b100, 0b110, 0b100, 0b111);
            case 'F': return rows(0b111, 0b100, 0b110, 0b100, 0b100);
            case 'G': return rows(0b011, 0b100, 0b101, 0b101, 0b011);
            case 'H': return rows(0b101, 0b101, 0b111, 0b101, 0b101);
            case 'I': return rows(0b111, 0b010, 0b010, 0b010, 0b111);
            case 'J': return rows(0b001, 0b001, 0b001, 0b101, 0b010);
            case 'K': return rows(0b101, 0b110, 0b100, 0b110, 0b101);
            case 'L': return rows(0b100, 0b100, 0b100, 0b100, 0b111);
            case 'M': return rows(0b101, 0b111, 0b111, 0b101, 0b101);
            case 'N': return rows(0b101, 0b111, 0b111, 0b111, 0b101);
            case 'O': return rows(0b010, 0b101, 0b101, 0b101, 0b010);
            case 'P': return rows(0b110, 0b101, 0b110, 0b100, 0b100);
            case 'Q': return rows(0b010, 0b101, 0b101, 0b011, 0b001);
            case 'R': return rows(0b110, 0b101, 0b110, 0b110, 0b101);
            case 'S': return rows(0b011, 0b100, 0b010, 0b001, 0b110);
            case 'T': return rows(0b111, 0b010, 0b010, 0b010, 0b010);
            case 'U': return rows(0b101, 0b101, 0b101, 0b101, 0b111);
            case 'V': return rows(0b101, 0b101, 0b101, 0b101, 0b010);
            case 'W': return rows(0b101, 0b101, 0b111, 0b111, 0b101);
            case 'X': return rows(0b101, 0b101, 0b010, 0b101, 0b101);
            case 'Y': return rows(0b101, 0b101, 0b010, 0b010, 0b010);
            case 'Z': return rows(0b111, 0b001, 0b010, 0b100, 0b111);
            case '-': return rows(0b000, 0b000, 0b111, 0b000, 0b000);
            case '+': return rows(0b000, 0b010, 0b111, 0b010, 0b000);
            case '.': return rows(0b000, 0b000, 0b000, 0b000, 0b010);
            case ',': return rows(0b000, 0b000, 0b000, 0b010, 0b100);
            case ':': return rows(0b000, 0b010, 0b000, 0b010, 0b000);
            case '_': return rows(0b000, 0b000, 0b000, 0b000, 0b111);
            case '=': return rows(0b000, 0b111, 0b000, 0b111, 0b000);
            case '%': return rows(0b101, 0b001, 0b010, 0b100, 0b101);
            case ' ': return 0;
            default: return rows(0b111, 0b111, 0b111, 0b111, 0b111);  // unknown: solid block
        }
    }

    int w_, h_;
    std::vector<Color> px_;
};

// Mean trajectory with a +-1 sample-std band, computed across the seeds of
// one configuration. Trajectories are truncated to the shortest run and
// must agree on the step axis after truncation.
struct BandSeries {
    std::string label;
    std::vector<long> steps;
    std::vector<double> mean;
    std::vector<double> lo;
    std::vector<double> hi;
};

struct Trajectory {
    std::vector<long> steps;
    std::vector<double> values;
};

inline BandSeries capacity_band(const std::vector<Trajectory>& runs, const std::string& label = "") {
    require(!runs.empty(), "capacity_band: no trajectories");
    std::size_t len = runs[0].steps.size();
    for (const Trajectory& t : runs) {
        require(t.steps.size() == t.values.size(), "capacity_band: steps/values length mismatch");
        len = std::min(len, t.steps.size());
    }
    require(len > 0, "capacity_band: empty trajectory");
    for (const Trajectory& t : runs)
        for (std::size_t i = 0; i < len; ++i)
            require(t.steps[i] == runs[0].steps[i], "capacity_band: step axes differ");
    BandSeries out;
    out.label = label;
    out.steps.assign(runs[0].steps.begin(), runs[0].steps.begin() + static_cast<long>(len));
    const double n = static_cast<double>(runs.size());
    for (std::size_t i = 0; i < len; ++i) {
        double mean = 0.0;
        for (const Trajectory& t : runs) mean += t.values[i];
        mean /= n;
        double ss = 0.0;
        for (const Trajectory& t : runs) ss += (t.values[i] - mean) * (t.values[i] - mean);
        const double sd = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;  // one seed: zero-width band
        out.mean.push_back(mean);
        out.lo.push_back(mean - sd);
        out.hi.push_back(mean + sd);
    }
    return out;
}

inline const std::vector<Color>& palette() {
    static const std::vector<Color> p = {
        {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}, {23, 190, 207},
    };
    return p;
}

// Capacity-vs-step plot: one mean line plus shaded +-1 std band per series.
inline void plot_capacity(const std::vector<BandSeries>& series, const std::filesystem::path& path) {
    require(!series.empty(), "plot_capacity: no series");
    const int W = 640, H = 420, L = 70, R = 20, T = 24, B = 46;
    Canvas cv(W, H);
    long xmax = 1;
    double ymax = 0.0;
    for (const BandSeries& s : series) {
        require(!s.steps.empty(), "plot_capacity: empty series");
        xmax = std::max(xmax, s.steps.back());
        for (double v : s.hi) ymax = std::max(ymax, v);
    }
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.05;
    auto px = [&](long step) {
        return L + static_cast<int>(std::lround(static_cast<double>(step) / xmax * (W - L - R)));
    };
    auto py = [&](double v) {
        return H - B - static_cast<int>(std::lround(v / ymax * (H - T - B)));
    };
    const Color axis{40, 40, 40}, grid{225, 225, 225};
    for (int i = 0; i <= 4; ++i) {  // horizontal grid + y tick labels
        const double v = ymax * i / 4.0;
        const int y = py(v);
        if (i > 0) cv.line(L, y, W - R, y, grid);
        char lab[32];
        std::snprintf(lab, sizeof(lab), "%.3g", v);
        cv.text(L - 6 - Canvas::text_width(lab), y - 5, lab, axis);
    }
    for (int i = 0; i <= 4; ++i) {  // x tick labels
        const long s = static_cast<long>(std::lround(static_cast<double>(xmax) * i / 4.0));
        char lab[32];
        std::snprintf(lab, sizeof(lab), "%ld", s);
        cv.text(px(s) - Canvas::text_width(lab) / 2, H - B + 8, lab, axis);
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const BandSeries& s = series[si];
        const Color c = palette()[si % palette().size()];
        const Color band = mix(c, {255, 255, 255}, 0.75);
        for (std::size_t i = 0; i + 1 < s.steps.size(); ++i) {  // band fill, column by column
            const int x0 = px(s.steps[i]), x1 = px(s.steps[i + 1]);
            for (int x = x0; x <= x1; ++x) {
                const double t = x1 > x0 ? static_cast<double>(x - x0) / (x1 - x0) : 0.0;
                const double lo = s.lo[i] + t * (s.lo[i + 1] - s.lo[i]);
                const double hi = s.hi[i] + t * (s.hi[i + 1] - s.hi[i]);
                for (int y = py(hi); y <= py(lo); ++y)
                    if (y >= T && y <= H - B) cv.set(x, y, band);
            }
        }
    }
    for (std::size_t si = 0; si < series.size(); ++si) {  // mean lines above all bands
        const BandSeries& s = series[si];
        const Color c = palette()[si % palette().size()];
        for (std::size_t i = 0; i + 1 < s.steps.size(); ++i)
            cv.line(px(s.steps[i]), py(s.mean[i]), px(s.steps[i + 1]), py(s.mean[i + 1]), c);
    }
    cv.line(L, T, L, H - B, axis);
    cv.line(L, H - B, W - R, H - B, axis);
    cv.text(L, 6, "CAPACITY C VS STEP", axis);
    int lx = L + 8;
    const int ly = T + 6;
    for (std::size_t si = 0; si < series.size(); ++si) {  // legend
        const Color c = palette()[si % palette().size()];
        cv.fill_rect(lx, ly + 2, lx + 14, ly + 8, c);
        lx += 18;
        lx += cv.text(lx, ly, series[si].label, axis) + 14;
    }
    cv.save_bmp(path);
}

// Correlation heatmap: blue (-1) through white (0) to red (+1), with
// round(rho*100) printed in each cell.
inline void plot_heatmap(const Mat<double>& rho, const std::vector<std::string>& names,
                         const std::filesystem::path& path) {
    const int n = static_cast<int>(names.size());
    require(n >= 1 && rho.rows() == n && rho.cols() == n, "plot_heatmap: rho must be square over names");
    int label_w = 0;
    for (const std::string& s : names) label_w = std::max(label_w, Canvas::text_width(s));
    const int cell = 56, L = label_w + 14, T = 26, B = 16, R = 16;
    Canvas cv(L + n * cell + R, T + n * cell + B + 12);
    const Color axis{40, 40, 40};
    const Color blue{33, 68, 170}, white{255, 255, 255}, red{190, 32, 38};
    for (int i = 0; i < n; ++i) {
        cv.text(L - 10 - Canvas::text_width(names[i]), T + i * cell + cell / 2 - 5, names[i], axis);
        cv.text(L + i * cell + cell / 2 - Canvas::text_width(names[i]) / 2, T + n * cell + 8, names[i], axis);
        for (int j = 0; j < n; ++j) {
            const double v = std::clamp(rho(i, j), -1.0, 1.0);
            const Color c = v < 0 ? mix(white, blue, -v) : mix(white, red, v);
            cv.fill_rect(L + j * cell, T + i * cell, L + (j + 1) * cell - 1, T + (i + 1) * cell - 1, c);
            char lab[16];
            std::snprintf(lab, sizeof(lab), "%d", static_cast<int>(std::lround(v * 100.0)));
            const Color ink = std::abs(v) > 0.6 ? white : axis;
            cv.text(L + j * cell + cell / 2 - Canvas::text_width(lab) / 2, T + i * cell + cell / 2 - 5, lab, ink);
        }
    }
    cv.text(L, 6, "SPEARMAN RHO X100", axis);
    cv.save_bmp(path);
}

}  // namespace davalab::harness
