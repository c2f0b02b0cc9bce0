#include "bft/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>

#include "bft/rng.hpp"
#include "bft/serial.hpp"

namespace bft {

static uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw io_error(IoCode::Truncated, std::string("idx: truncated reading ") + what);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

static void write_be32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

LabeledSet load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw io_error(IoCode::Truncated, "idx: cannot open " + images_path);
    if (read_be32(imgs, "image magic") != 0x00000803u)
        throw io_error(IoCode::BadMagic, "idx: bad image magic in " + images_path);
    const uint32_t count = read_be32(imgs, "image count");
    const uint32_t rows = read_be32(imgs, "rows");
    const uint32_t cols = read_be32(imgs, "cols");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw io_error(IoCode::Truncated, "idx: cannot open " + labels_path);
    if (read_be32(labs, "label magic") != 0x00000801u)
        throw io_error(IoCode::BadMagic, "idx: bad label magic in " + labels_path);
    const uint32_t label_count = read_be32(labs, "label count");
    if (label_count != count)
        throw io_error(IoCode::ShapeMismatch,
                       "idx: image count " + std::to_string(count) + " != label count " +
                           std::to_string(label_count));

    LabeledSet set;
    set.images.reserve(count);
    set.labels.reserve(count);
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
    int max_label = -1;
    for (uint32_t i = 0; i < count; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw io_error(IoCode::Truncated, "idx: truncated image payload");
        Tensor t({1, static_cast<int>(rows), static_cast<int>(cols)});
        for (size_t p = 0; p < buf.size(); ++p)
            t.data[p] = static_cast<float>(buf[p]) / 255.0f;
        unsigned char lab;
        if (!labs.read(reinterpret_cast<char*>(&lab), 1))
            throw io_error(IoCode::Truncated, "idx: truncated label payload");
        set.images.push_back(std::move(t));
        set.labels.push_back(static_cast<int>(lab));
        max_label = std::max(max_label, static_cast<int>(lab));
    }
    set.num_classes = max_label + 1;
    return set;
}

void save_idx_dataset(const LabeledSet& set, const std::string& images_path,
                      const std::string& labels_path) {
    if (set.images.empty()) throw std::invalid_argument("idx: empty set");
    const int rows = set.images.front().dim(1);
    const int cols = set.images.front().dim(2);
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("idx: cannot write " + images_path);
    write_be32(imgs, 0x00000803u);
    write_be32(imgs, static_cast<uint32_t>(set.images.size()));
    write_be32(imgs, static_cast<uint32_t>(rows));
    write_be32(imgs, static_cast<uint32_t>(cols));
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
    for (const Tensor& t : set.images) {
        require_shape(t, {1, rows, cols}, "idx: image");
        for (size_t p = 0; p < buf.size(); ++p)
            buf[p] = static_cast<unsigned char>(
                std::lround(std::clamp(t.data[p], 0.0f, 1.0f) * 255.0f));
        imgs.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("idx: cannot write " + labels_path);
    write_be32(labs, 0x00000801u);
    write_be32(labs, static_cast<uint32_t>(set.labels.size()));
    for (int l : set.labels) {
        unsigned char b = static_cast<unsigned char>(l);
        labs.write(reinterpret_cast<char*>(&b), 1);
    }
}

static LabeledSet filter_task_split(const LabeledSet& all, const std::vector<int>& classes,
                                    int per_class) {
    LabeledSet out;
    out.num_classes = static_cast<int>(classes.size());
    std::vector<int> taken(classes.size(), 0);
    for (size_t i = 0; i < all.images.size(); ++i) {
        for (size_t c = 0; c < classes.size(); ++c) {
            if (all.labels[i] != classes[c]) continue;
            if (per_class > 0 && taken[c] >= per_class) break;
            out.images.push_back(all.images[i]);
            out.labels.push_back(static_cast<int>(c));
            ++taken[c];
            break;
        }
    }
    for (size_t c = 0; c < classes.size(); ++c) {
        if (taken[c] == 0 || (per_class > 0 && taken[c] < per_class))
            throw std::invalid_argument("tasks: class " + std::to_string(classes[c]) + " has " +
                                        std::to_string(taken[c]) + " examples, need " +
                                        std::to_string(per_class > 0 ? per_class : 1));
    }
    return out;
}

std::vector<Task> make_disjoint_tasks(const LabeledSet& train_all, const LabeledSet& test_all,
                                      const std::vector<std::vector<int>>& subsets,
                                      int train_per_class, int test_per_class) {
    std::set<int> seen;
    for (const auto& sub : subsets) {
        if (sub.empty()) throw std::invalid_argument("tasks: empty class subset");
        for (int c : sub)
            if (!seen.insert(c).second)
                throw std::invalid_argument("tasks: class " + std::to_string(c) +
                                            " appears in more than one subset");
    }
    std::vector<Task> tasks;
    for (size_t i = 0; i < subsets.size(); ++i) {
        Task t;
        t.spec.classes = subsets[i];
        t.spec.train_per_class = train_per_class;
        t.spec.test_per_class = test_per_class;
        t.spec.name = "task";
        for (int c : subsets[i]) t.spec.name += "-" + std::to_string(c);
        t.train = filter_task_split(train_all, subsets[i], train_per_class);
        t.test = filter_task_split(test_all, subsets[i], test_per_class);
        tasks.push_back(std::move(t));
    }
    return tasks;
}

namespace {

struct Canvas {
    double px[28][28] = {};

    void stamp(int x, int y, double v) {
        if (x >= 0 && x < 28 && y >= 0 && y < 28) px[y][x] = std::max(px[y][x], v);
    }

    void line(double x0, double y0, double x1, double y1, double half_th, double v) {
        const double dx = x1 - x0, dy = y1 - y0;
        const double len2 = dx * dx + dy * dy;
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double ex = x - (x0 + t * dx), ey = y - (y0 + t * dy);
                const double d = std::sqrt(ex * ex + ey * ey);
                if (d <= half_th) stamp(x, y, v);
            }
    }

    void ring(double cx, double cy, double r, double half_th, double v) {
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
                if (std::abs(d - r) <= half_th) stamp(x, y, v);
            }
    }

    void disk(double cx, double cy, double r, double v) {
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) stamp(x, y, v);
    }
};

Tensor render_class(int cls, Rng& rng) {
    Canvas c;
    const double cx = 13.5 + (rng.uniform01() - 0.5) * 8.0;
    const double cy = 13.5 + (rng.uniform01() - 0.5) * 8.0;
    const double v = 0.55 + rng.uniform01() * 0.45;
    const double th = 1.0 + rng.uniform01() * 0.6;  // half thickness
    const double arm = 8.0 + rng.uniform01() * 3.0;
    switch (cls) {
        case 0:  // horizontal bar
            c.line(cx - arm, cy, cx + arm, cy, th, v);
            break;
        case 1:  // vertical bar
            c.line(cx, cy - arm, cx, cy + arm, th, v);
            break;
        case 2:  // falling diagonal
            c.line(cx - arm * 0.75, cy - arm * 0.75, cx + arm * 0.75, cy + arm * 0.75, th, v);
            break;
        case 3:  // rising diagonal
            c.line(cx - arm * 0.75, cy + arm * 0.75, cx + arm * 0.75, cy - arm * 0.75, th, v);
            break;
        case 4:  // cross
            c.line(cx - arm * 0.8, cy, cx + arm * 0.8, cy, th, v);
            c.line(cx, cy - arm * 0.8, cx, cy + arm * 0.8, th, v);
            break;
        case 5:  // X
            c.line(cx - arm * 0.65, cy - arm * 0.65, cx + arm * 0.65, cy + arm * 0.65, th, v);
            c.line(cx - arm * 0.65, cy + arm * 0.65, cx + arm * 0.65, cy - arm * 0.65, th, v);
            break;
        case 6: {  // square outline
            const double s = arm * 0.7;
            c.line(cx - s, cy - s, cx + s, cy - s, th, v);
            c.line(cx + s, cy - s, cx + s, cy + s, th, v);
            c.line(cx + s, cy + s, cx - s, cy + s, th, v);
            c.line(cx - s, cy + s, cx - s, cy - s, th, v);
            break;
        }
        case 7:  // ring
            c.ring(cx, cy, arm * 0.6, th, v);
            break;
        case 8:  // filled disk
            c.disk(cx, cy, arm * 0.55, v);
            break;
        case 9: {  // 3x3 dot grid
            const double sp = 3.5 + rng.uniform01() * 1.5;
            for (int gy = -1; gy <= 1; ++gy)
                for (int gx = -1; gx <= 1; ++gx)
                    c.disk(cx + gx * sp, cy + gy * sp, 1.2 + 0.4 * rng.uniform01(), v);
            break;
        }
        default:
            throw std::invalid_argument("stroke dataset: class out of range");
    }

    Tensor t({1, 28, 28});
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            double val = c.px[y][x] + rng.normal() * 0.35;
            val = std::clamp(val, 0.0, 1.0);
            const long q = std::lround(val * 255.0);
            t.data[static_cast<size_t>(y) * 28 + x] = static_cast<float>(q) / 255.0f;
        }
    return t;
}

}  // namespace

LabeledSet make_stroke_dataset(int per_class, uint64_t seed) {
    if (per_class <= 0) throw std::invalid_argument("stroke dataset: per_class must be positive");
    LabeledSet set;
    set.num_classes = 10;
    // class-major order; each sample has its own derived stream
    for (int cls = 0; cls < 10; ++cls)
        for (int i = 0; i < per_class; ++i) {
            Rng rng(sub_seed(seed, static_cast<uint64_t>(cls) * 1000003u +
                                       static_cast<uint64_t>(i)));
            set.images.push_back(render_class(cls, rng));
            set.labels.push_back(cls);
        }
    return set;
}

}  // namespace bft
