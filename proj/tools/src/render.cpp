// SPDX-License-Identifier: Apache-2.0

#include "render.hpp"

#include "mgpt/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mgpt::cli {

namespace {

constexpr int kPanelW = 640, kPanelH = 120, kMargin = 40;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.1f", v);
    return b;
}

void polyline(std::ostringstream& os, const Matrix& m, int ch, double lo, double hi, long T, int top,
              const char* color, bool dashed) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (dashed) os << " stroke-dasharray=\"4 3\" opacity=\"0.6\"";
    os << " points=\"";
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        const double x = kMargin + (T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0) * kPanelW;
        const double y = top + kPanelH - (m(t, ch) - lo) / (hi - lo) * kPanelH;
        os << fmt(x) << ',' << fmt(y) << ' ';
    }
    os << "\"/>\n";
}

}  // namespace

std::string render_motion_svg(const Matrix& frames, const std::optional<Matrix>& reference, int dims,
                              const std::string& title) {
    if (frames.rows() < 1) throw DomainError("render: empty motion");
    if (reference && reference->cols() != frames.cols()) throw DomainError("render: reference width differs");
    dims = std::clamp(dims, 1, static_cast<int>(frames.cols()));
    const long T = std::max<long>(frames.rows(), reference ? reference->rows() : 0);
    const int height = kMargin * 2 + dims * (kPanelH + 20);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPanelW + 2 * kMargin << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kMargin << "\" y=\"24\" font-size=\"14\">" << esc(title) << "</text>\n";
    for (int ch = 0; ch < dims; ++ch) {
        const int top = kMargin + ch * (kPanelH + 20);
        double lo = frames.col(ch).minCoeff(), hi = frames.col(ch).maxCoeff();
        if (reference) {
            lo = std::min(lo, reference->col(ch).minCoeff());
            hi = std::max(hi, reference->col(ch).maxCoeff());
        }
        if (hi - lo < 1e-9) {
            lo -= 0.5;
            hi += 0.5;
        }
        os << "<rect x=\"" << kMargin << "\" y=\"" << top << "\" width=\"" << kPanelW << "\" height=\"" << kPanelH
           << "\" fill=\"none\" stroke=\"#ccc\"/>\n";
        os << "<text x=\"" << kMargin + 4 << "\" y=\"" << top + 12 << "\">channel " << ch << "</text>\n";
        const char* color = kColors[ch % 6];
        if (reference) polyline(os, *reference, ch, lo, hi, T, top, color, true);
        polyline(os, frames, ch, lo, hi, T, top, color, false);
    }
    os << "<text x=\"" << kMargin << "\" y=\"" << height - 12 << "\">frames 0.." << T - 1 << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace mgpt::cli
