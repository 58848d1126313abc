#include "patchpad/manifest.hpp"

#include "patchpad/error.hpp"
#include "patchpad/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

namespace patchpad {

using nlohmann::json;

namespace {

json rects_json(const std::vector<Rect>& rects) {
    json a = json::array();
    for (const Rect& r : rects) a.push_back({r.x, r.y, r.w, r.h});
    return a;
}

std::vector<Rect> parse_rects(const json& a, const std::string& doc) {
    std::vector<Rect> out;
    if (!a.is_array()) throw Error(ErrorKind::format, "anon_rects of '" + doc + "' must be arrays");
    for (const json& r : a) {
        if (!r.is_array() || r.size() != 4) throw Error(ErrorKind::format, "rect of '" + doc + "' must be [x,y,w,h]");
        out.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>(), r[3].get<std::size_t>()});
    }
    return out;
}

std::vector<std::string> sorted_subjects(const Manifest& m, std::span<const std::size_t> rows) {
    std::vector<std::string> s;
    for (std::size_t i : rows) s.push_back(m.rows[i].subject_id);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

}  // namespace

AnonymizationSpec ManifestRow::anonymization(AnonLevel level) const {
    switch (level) {
        case AnonLevel::non: return {AnonLevel::non, {}};
        case AnonLevel::pseudo: return {AnonLevel::pseudo, pseudo_rects};
        case AnonLevel::full: return {AnonLevel::full, full_rects};
    }
    return {};
}

std::filesystem::path Manifest::resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

void Manifest::validate() const {
    std::unordered_set<std::string> seen;
    for (const ManifestRow& r : rows) {
        if (r.doc_id.empty()) throw invalid_argument("manifest row without doc_id");
        if (r.subject_id.empty()) throw invalid_argument("document '" + r.doc_id + "' has no subject_id");
        if (!seen.insert(r.doc_id).second) throw invalid_argument("duplicate doc_id '" + r.doc_id + "'");
        if (r.label != "real" && r.label != "attack")
            throw invalid_argument("document '" + r.doc_id + "': label must be real or attack");
        if ((r.label == "real") != (r.attack_type == AttackType::none))
            throw invalid_argument("document '" + r.doc_id + "': label real requires attack_type none and vice versa");
    }
}

void Manifest::check_paths() const {
    for (const ManifestRow& r : rows) {
        if (!r.image_path.empty() && !std::filesystem::exists(resolve(r.image_path)))
            throw io_error("image of '" + r.doc_id + "' not found: " + resolve(r.image_path).string());
        if (!r.patch_dir.empty() && !std::filesystem::is_directory(resolve(r.patch_dir)))
            throw io_error("patch folder of '" + r.doc_id + "' not found: " + resolve(r.patch_dir).string());
        if (r.image_path.empty() && r.patch_dir.empty())
            throw invalid_argument("document '" + r.doc_id + "' names neither image_path nor patch_dir");
    }
}

Label head_class(const ManifestRow& row) {
    switch (row.attack_type) {
        case AttackType::none: return Label::real;
        case AttackType::print: return Label::print;
        case AttackType::screen: return Label::screen;
        case AttackType::composite: return Label::composite;
        default:
            throw invalid_argument("attack type '" + std::string(to_string(row.attack_type)) + "' of '" + row.doc_id +
                                   "' has no patch class and cannot be used for training");
    }
}

std::string manifest_line(const ManifestRow& r) {
    json j;
    j["doc_id"] = r.doc_id;
    j["subject_id"] = r.subject_id;
    j["label"] = r.label;
    j["attack_type"] = std::string(to_string(r.attack_type));
    j["device"] = r.device;
    j["illumination"] = r.illumination;
    j["height_cm"] = r.height_cm;
    j["anon_level"] = std::string(to_string(r.anon_level));
    j["template_version"] = r.template_version;
    if (!r.image_path.empty()) j["image_path"] = r.image_path;
    if (!r.patch_dir.empty()) {
        j["patch_dir"] = r.patch_dir;
        j["n_patches"] = r.n_patches;
    }
    j["dataset_name"] = r.dataset_name;
    if (!r.pseudo_rects.empty() || !r.full_rects.empty())
        j["anon_rects"] = {{"pseudo", rects_json(r.pseudo_rects)}, {"full", rects_json(r.full_rects)}};
    return j.dump();
}

ManifestRow parse_manifest_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("malformed manifest line: ") + e.what());
    }
    ManifestRow r;
    try {
        r.doc_id = j.at("doc_id").get<std::string>();
        r.subject_id = j.at("subject_id").get<std::string>();
        r.label = j.at("label").get<std::string>();
        r.attack_type = parse_attack_type(j.at("attack_type").get<std::string>());
        r.device = j.value("device", std::string("other"));
        r.illumination = j.value("illumination", std::string("bright_noflash"));
        r.height_cm = j.value("height_cm", 10.0);
        r.anon_level = parse_anon_level(j.value("anon_level", std::string("non")));
        r.template_version = j.value("template_version", 2);
        r.image_path = j.value("image_path", std::string());
        r.patch_dir = j.value("patch_dir", std::string());
        r.n_patches = j.value("n_patches", std::size_t{0});
        r.dataset_name = j.value("dataset_name", std::string());
        if (j.contains("anon_rects")) {
            const json& a = j["anon_rects"];
            if (a.contains("pseudo")) r.pseudo_rects = parse_rects(a["pseudo"], r.doc_id);
            if (a.contains("full")) r.full_rects = parse_rects(a["full"], r.doc_id);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("bad manifest field: ") + e.what());
    }
    return r;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            m.rows.push_back(parse_manifest_line(line));
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    m.validate();
    return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw io_error("cannot write manifest " + path.string());
    for (const ManifestRow& r : manifest.rows) out << manifest_line(r) << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

Split make_splits(const Manifest& m, const SplitSpec& spec) {
    if (!(spec.dev_fraction >= 0.0 && spec.dev_fraction <= 1.0)) throw invalid_argument("dev_fraction must lie in [0, 1]");
    std::vector<std::size_t> all(m.rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const std::vector<std::string> subjects = sorted_subjects(m, all);

    std::set<std::string> forced;
    for (const ManifestRow& r : m.rows)
        if (spec.forced_eval_template_versions.count(r.template_version)) forced.insert(r.subject_id);
    std::vector<std::string> free;
    for (const auto& s : subjects)
        if (!forced.count(s)) free.push_back(s);

    Rng rng(spec.seed);
    rng.shuffle(std::span<std::string>(free));
    const auto target = static_cast<std::size_t>(std::llround(spec.dev_fraction * static_cast<double>(subjects.size())));
    const std::size_t n_dev = std::min(target, free.size());
    const std::set<std::string> dev_subjects(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(n_dev));

    Split split;
    std::map<AttackType, std::set<std::string>> dev_by_class;
    std::set<AttackType> classes;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        const ManifestRow& r = m.rows[i];
        classes.insert(r.attack_type);
        if (dev_subjects.count(r.subject_id)) {
            split.dev.push_back(i);
            dev_by_class[r.attack_type].insert(r.subject_id);
        } else {
            split.eval.push_back(i);
        }
    }
    std::string deficient;
    for (AttackType c : classes) {
        const std::size_t n = dev_by_class[c].size();
        if (n < 2) {
            if (!deficient.empty()) deficient += ", ";
            deficient += std::string(to_string(c)) + " (" + std::to_string(n) + ")";
        }
    }
    if (!deficient.empty())
        throw invalid_argument("split leaves fewer than 2 development subjects for class " + deficient);
    return split;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(const Manifest& m,
                                                                              std::span<const std::size_t> rows,
                                                                              double val_fraction, std::uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw invalid_argument("val_fraction must lie in [0, 1)");
    std::vector<std::string> subjects = sorted_subjects(m, rows);
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(subjects));
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(subjects.size())));
    if (val_fraction > 0.0 && n_val == 0 && subjects.size() >= 2) n_val = 1;
    const std::set<std::string> val(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t i : rows) (val.count(m.rows[i].subject_id) ? out.second : out.first).push_back(i);
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

Manifest sample_rows(const Manifest& manifest, std::size_t n, std::uint64_t seed) {
    if (n > manifest.rows.size())
        throw invalid_argument("cannot sample " + std::to_string(n) + " of " + std::to_string(manifest.rows.size()) +
                               " manifest rows");
    std::vector<std::size_t> idx(manifest.rows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    Manifest out;
    out.base_dir = manifest.base_dir;
    for (std::size_t i : idx) out.rows.push_back(manifest.rows[i]);
    return out;
}

}  // namespace patchpad
