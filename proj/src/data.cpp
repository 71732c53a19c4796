#include "pyramid/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace pyramid {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<int> DatasetIndex::identities() const {
    std::vector<int> ids;
    ids.reserve(records.size());
    for (const IndexRecord& r : records) ids.push_back(r.identity);
    return ids;
}

// ---------------------------------------------------------------------------
// Index CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

double parse_coordinate(const std::string& field, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw FormatError("index line " + std::to_string(line_no) + ": bad landmark value '" +
                          field + "'");
    }
}

}  // namespace

DatasetIndex load_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open index file " + path.string());
    const fs::path base = path.parent_path();

    DatasetIndex index;
    std::map<std::string, int> ids;
    std::set<fs::path> seen;
    std::string line;
    std::size_t line_no = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> fields = split_csv_line(line);
        for (std::string& f : fields) f = trim(f);
        if (header) {
            header = false;
            if (fields.size() < 2 || fields[0] != "path" || fields[1] != "identity") {
                throw FormatError("index line " + std::to_string(line_no) +
                                  ": header must start with 'path,identity'");
            }
            continue;
        }
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
            throw FormatError("index line " + std::to_string(line_no) +
                              ": expected at least path and identity");
        }
        while (fields.size() > 2 && fields.back().empty()) fields.pop_back();
        if ((fields.size() - 2) % 2 != 0) {
            throw FormatError("index line " + std::to_string(line_no) +
                              ": odd number of landmark fields");
        }
        IndexRecord rec;
        rec.path = fs::path(fields[0]);
        if (rec.path.is_relative()) rec.path = base / rec.path;
        rec.path = rec.path.lexically_normal();
        if (!seen.insert(rec.path).second) {
            throw FormatError("index line " + std::to_string(line_no) + ": duplicate path " +
                              fields[0]);
        }
        auto [it, inserted] = ids.try_emplace(fields[1], static_cast<int>(index.roster.size()));
        if (inserted) index.roster.push_back(fields[1]);
        rec.identity = it->second;
        for (std::size_t i = 2; i < fields.size(); i += 2) {
            rec.landmarks.push_back(
                {parse_coordinate(fields[i], line_no), parse_coordinate(fields[i + 1], line_no)});
        }
        index.records.push_back(std::move(rec));
    }
    if (header) throw FormatError("index file " + path.string() + " is empty");
    return index;
}

void write_index(const DatasetIndex& index, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write index file " + path.string());
    std::size_t max_landmarks = 0;
    for (const IndexRecord& r : index.records) max_landmarks = std::max(max_landmarks, r.landmarks.size());
    out << "path,identity";
    for (std::size_t i = 1; i <= max_landmarks; ++i) out << ",lx" << i << ",ly" << i;
    out << '\n';
    const fs::path base = fs::absolute(path).parent_path();
    out.precision(17);
    for (const IndexRecord& r : index.records) {
        fs::path p = fs::absolute(r.path).lexically_normal();
        const fs::path rel = p.lexically_relative(base);
        if (!rel.empty()) p = rel;
        out << p.generic_string() << ',' << index.roster.at(r.identity);
        for (const Landmark& l : r.landmarks) out << ',' << l.x << ',' << l.y;
        out << '\n';
    }
    if (!out) throw IoError("failed writing index file " + path.string());
}

// ---------------------------------------------------------------------------
// PGM

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

}  // namespace

Tensor read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    const std::string magic = pgm_token(in);
    if (magic != "P5") {
        throw FormatError(path.string() + ": expected binary PGM magic 'P5'");
    }
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(pgm_token(in));
        h = std::stoul(pgm_token(in));
        maxval = std::stoul(pgm_token(in));
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PGM header");
    }
    if (w == 0 || h == 0) throw FormatError(path.string() + ": zero image extent");
    if (maxval == 0 || maxval > 255) {
        throw FormatError(path.string() + ": maxval " + std::to_string(maxval) +
                          " unsupported (8-bit only)");
    }
    std::vector<unsigned char> bytes(w * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(path.string() + ": truncated pixel data");
    }
    std::vector<double> values(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        values[i] = std::min(1.0, static_cast<double>(bytes[i]) / static_cast<double>(maxval));
    }
    return Tensor({h, w, 1}, std::move(values));
}

void write_pgm(const Tensor& image, const fs::path& path) {
    if (image.rank() != 3 || image.extent(2) != 1) {
        throw ShapeError("write_pgm expects an h x w x 1 tensor, got " + to_string(image.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P5\n" << image.extent(1) << ' ' << image.extent(0) << "\n255\n";
    std::vector<unsigned char> bytes(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing image " + path.string());
}

LabeledImage load_image(const IndexRecord& record) {
    LabeledImage img{read_pgm(record.path), record.identity, record.landmarks};
    for (const Landmark& l : img.landmarks) {
        if (l.x < 0 || l.y < 0 || l.x >= static_cast<double>(img.width()) ||
            l.y >= static_cast<double>(img.height())) {
            throw FormatError(record.path.string() + ": landmark (" + std::to_string(l.x) + ", " +
                              std::to_string(l.y) + ") outside the image");
        }
    }
    return img;
}

std::vector<LabeledImage> load_images(const DatasetIndex& index) {
    std::vector<LabeledImage> images;
    images.reserve(index.records.size());
    for (const IndexRecord& r : index.records) images.push_back(load_image(r));
    return images;
}

// ---------------------------------------------------------------------------
// Splitting and sampling

namespace {

DatasetIndex subset(const DatasetIndex& index, const std::vector<bool>& keep) {
    DatasetIndex out;
    std::vector<int> remap(index.roster.size(), -1);
    for (const IndexRecord& r : index.records) {
        if (!keep[r.identity]) continue;
        if (remap[r.identity] < 0) {
            remap[r.identity] = static_cast<int>(out.roster.size());
            out.roster.push_back(index.roster[r.identity]);
        }
        IndexRecord copy = r;
        copy.identity = remap[r.identity];
        out.records.push_back(std::move(copy));
    }
    return out;
}

}  // namespace

std::vector<bool> holdout_identities(std::size_t n_identities, double fraction,
                                     std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("holdout fraction must lie in (0,1)");
    }
    if (n_identities < 2) throw std::invalid_argument("identity split needs at least 2 identities");
    const double want = std::ceil(fraction * static_cast<double>(n_identities) - 1e-12);
    const std::size_t n_out =
        std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, n_identities - 1);

    std::vector<std::size_t> order(n_identities);
    for (std::size_t i = 0; i < n_identities; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> held(n_identities, false);
    for (std::size_t i = 0; i < n_out; ++i) held[order[i]] = true;
    return held;
}

std::pair<DatasetIndex, DatasetIndex> split_by_identity(const DatasetIndex& index,
                                                        double holdout_fraction,
                                                        std::uint64_t seed) {
    const std::vector<bool> eval = holdout_identities(index.identity_count(), holdout_fraction, seed);
    std::vector<bool> train(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) train[i] = !eval[i];
    return {subset(index, train), subset(index, eval)};
}

std::vector<FacePair> sample_pairs(std::span<const int> identity_of, std::size_t n,
                                   std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < identity_of.size(); ++i) members[identity_of[i]].push_back(i);
    if (members.size() < 2) {
        throw std::invalid_argument("pair sampling needs at least 2 identities");
    }
    // Identities weighted by their count of ordered matched pairs k(k-1).
    std::vector<const std::vector<std::size_t>*> groups;
    std::vector<double> weights;
    for (const auto& [id, imgs] : members) {
        if (imgs.size() >= 2) {
            groups.push_back(&imgs);
            weights.push_back(static_cast<double>(imgs.size() * (imgs.size() - 1)));
        }
    }
    if (groups.empty()) {
        throw std::invalid_argument("pair sampling needs an identity with at least 2 images");
    }

    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick_group(weights.begin(), weights.end());
    std::uniform_int_distribution<std::size_t> pick_any(0, identity_of.size() - 1);

    const std::size_t n_matched = (n + 1) / 2;
    std::vector<FacePair> pairs;
    pairs.reserve(n);
    for (std::size_t k = 0; k < n_matched; ++k) {
        const auto& imgs = *groups[pick_group(rng)];
        std::uniform_int_distribution<std::size_t> pick(0, imgs.size() - 1);
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        pairs.push_back({imgs[a], imgs[b], PairLabel::matched()});
    }
    for (std::size_t k = n_matched; k < n; ++k) {
        std::size_t a = pick_any(rng), b = pick_any(rng);
        while (identity_of[a] == identity_of[b]) {
            a = pick_any(rng);
            b = pick_any(rng);
        }
        pairs.push_back({a, b, PairLabel::unmatched()});
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

std::vector<FacePair> sample_pairs(const DatasetIndex& index, std::size_t n, std::uint64_t seed) {
    const std::vector<int> ids = index.identities();
    return sample_pairs(ids, n, seed);
}

std::vector<FacePair> all_pairs(std::span<const int> identity_of) {
    std::vector<FacePair> pairs;
    for (std::size_t i = 0; i < identity_of.size(); ++i) {
        for (std::size_t j = i + 1; j < identity_of.size(); ++j) {
            pairs.push_back({i, j, identity_of[i] == identity_of[j] ? PairLabel::matched()
                                                                    : PairLabel::unmatched()});
        }
    }
    return pairs;
}

Tensor crop_patch(const LabeledImage& image, std::pair<std::size_t, std::size_t> origin,
                  std::size_t edge) {
    const auto [x, y] = origin;
    if (edge == 0 || x + edge > image.width() || y + edge > image.height()) {
        throw RangeError("patch at (" + std::to_string(x) + ", " + std::to_string(y) +
                         ") with edge " + std::to_string(edge) + " exceeds " +
                         std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                         " image");
    }
    const std::size_t o[] = {y, x, 0};
    const std::size_t e[] = {edge, edge, 1};
    return crop(image.pixels, o, e);
}

// ---------------------------------------------------------------------------
// Synthetic identities

namespace {

struct Grating {
    double kx, ky;  // radians per pixel
    double phase;
    double amplitude;
};

struct Blob {
    double cx, cy;  // offset from the image center, pixels
    double sigma;
    double amplitude;
};

struct IdentityPattern {
    std::vector<Grating> gratings;
    std::vector<Blob> blobs;

    double value(double x, double y, double center) const {
        double v = 0.5;
        for (const Grating& g : gratings) v += g.amplitude * std::cos(g.kx * x + g.ky * y + g.phase);
        for (const Blob& b : blobs) {
            const double dx = x - center - b.cx, dy = y - center - b.cy;
            v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        }
        return v;
    }
};

IdentityPattern make_pattern(double edge, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    IdentityPattern p;
    for (int i = 0; i < 2; ++i) {
        const double theta = std::numbers::pi * u(rng);
        const double cycles = 2.0 + 4.0 * u(rng);  // across the edge
        const double k = 2.0 * std::numbers::pi * cycles / edge;
        p.gratings.push_back({k * std::cos(theta), k * std::sin(theta),
                              2.0 * std::numbers::pi * u(rng), 0.12 + 0.08 * u(rng)});
    }
    for (int i = 0; i < 3; ++i) {
        const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
        p.blobs.push_back({(u(rng) - 0.5) * 0.6 * edge, (u(rng) - 0.5) * 0.6 * edge,
                           edge * (0.06 + 0.08 * u(rng)), sign * (0.15 + 0.15 * u(rng))});
    }
    return p;
}

}  // namespace

std::vector<LabeledImage> synth_images(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.edge < 16) throw std::invalid_argument("synthetic image edge must be at least 16");
    if (cfg.identities == 0 || cfg.images_per_identity == 0) {
        throw std::invalid_argument("synthetic dataset needs identities and images");
    }
    const double edge = static_cast<double>(cfg.edge);
    const double center = (edge - 1.0) / 2.0;
    const double max_shift = std::clamp(cfg.nuisance.translation, 0.0, 0.125) * edge;
    const double max_noise = std::clamp(cfg.nuisance.noise, 0.0, 0.05);
    const double bright = std::clamp(cfg.nuisance.brightness, 0.0, 0.3);

    std::vector<LabeledImage> images;
    images.reserve(cfg.identities * cfg.images_per_identity);
    for (std::size_t id = 0; id < cfg.identities; ++id) {
        std::mt19937_64 pattern_rng(derive_seed(seed, "identity:" + std::to_string(id)));
        const IdentityPattern pattern = make_pattern(edge, pattern_rng);
        std::mt19937_64 rng(derive_seed(seed, "nuisance:" + std::to_string(id)));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t k = 0; k < cfg.images_per_identity; ++k) {
            const double scale = 1.0 + bright * u(rng);
            const double tx = max_shift * u(rng), ty = max_shift * u(rng);
            Tensor px({cfg.edge, cfg.edge, 1});
            for (std::size_t y = 0; y < cfg.edge; ++y) {
                for (std::size_t x = 0; x < cfg.edge; ++x) {
                    double v = scale * pattern.value(static_cast<double>(x) - tx,
                                                     static_cast<double>(y) - ty, center);
                    if (max_noise > 0.0) v += max_noise * noise(rng);
                    // Quantize to the 8-bit grid so in-memory and on-disk data agree.
                    px(y, x, 0) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
                }
            }
            LabeledImage img{std::move(px), static_cast<int>(id), {}};
            if (cfg.landmarks) {
                const double d = edge / 6.0;
                for (auto [lx, ly] : {std::pair{-d, -d}, std::pair{d, -d}, std::pair{0.0, d}}) {
                    img.landmarks.push_back({center + lx + tx, center + ly + ty});
                }
            }
            images.push_back(std::move(img));
        }
    }
    return images;
}

DatasetIndex synth_generate(const SynthConfig& cfg, const fs::path& out_dir, std::uint64_t seed) {
    const std::vector<LabeledImage> images = synth_images(cfg, seed);
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    DatasetIndex index;
    for (std::size_t id = 0; id < cfg.identities; ++id) {
        index.roster.push_back("id" + std::to_string(id));
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        const LabeledImage& img = images[i];
        std::ostringstream name;
        name << "id" << img.identity << "_" << (i % cfg.images_per_identity) << ".pgm";
        const fs::path file = out_dir / "images" / name.str();
        write_pgm(img.pixels, file);
        index.records.push_back({file, img.identity, img.landmarks});
    }
    write_index(index, out_dir / "index.csv");
    return index;
}

}  // namespace pyramid
