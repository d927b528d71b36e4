#include "ircan/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "ircan/errors.hpp"

namespace ircan {

namespace {

bool is_special(const std::string& t) { return t.size() >= 3 && t.front() == '<' && t.back() == '>'; }

int parse_byte_token(const std::string& t) {
    // <0xHH>
    if (t.size() != 6 || t.compare(0, 3, "<0x") != 0 || t[5] != '>') return -1;
    unsigned v = 0;
    if (std::sscanf(t.c_str() + 3, "%2x", &v) != 1) return -1;
    return static_cast<int>(v);
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '_' || c == '\'' || c >= 0x80; }

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> table) : table_(std::move(table)) {
    std::fill(std::begin(byte_ids_), std::end(byte_ids_), -1);
    for (std::size_t i = 0; i < table_.size(); ++i) {
        const auto& t = table_[i];
        if (t.empty()) throw FormatError("tokenizer table contains an empty token at id " + std::to_string(i));
        if (!index_.emplace(t, static_cast<int>(i)).second) {
            throw FormatError("tokenizer table contains duplicate token '" + t + "'");
        }
        if (t == "<eos>") eos_ = static_cast<int>(i);
        if (int b = parse_byte_token(t); b >= 0) {
            byte_ids_[b] = static_cast<int>(i);
            byte_fallback_ = true;
        }
        if (!is_special(t)) max_len_ = std::max(max_len_, t.size());
    }
}

Tokenizer Tokenizer::from_corpus(std::string_view text) {
    std::set<std::string> units;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_word_char(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            units.emplace(text.substr(i, j - i));
            i = j;
        } else if (std::isspace(c)) {
            ++i;
        } else {
            units.emplace(1, static_cast<char>(c));
            ++i;
        }
    }
    std::set<std::string> tokens;
    for (const auto& u : units) {
        tokens.insert(u);
        tokens.insert(" " + u);
    }
    tokens.insert(" ");
    tokens.insert("\n");
    std::vector<std::string> table{"<eos>"};
    table.insert(table.end(), tokens.begin(), tokens.end());
    return Tokenizer(std::move(table));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    std::string probe;
    while (i < text.size()) {
        int found = -1;
        std::size_t found_len = 0;
        for (std::size_t len = std::min(max_len_, text.size() - i); len >= 1; --len) {
            probe.assign(text.substr(i, len));
            auto it = index_.find(probe);
            if (it != index_.end() && !is_special(it->first)) {
                found = it->second;
                found_len = len;
                break;
            }
        }
        if (found < 0) {
            const auto b = static_cast<unsigned char>(text[i]);
            if (byte_ids_[b] < 0) {
                std::size_t end = i;
                while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
                throw TokenizationError("out-of-vocabulary text at byte " + std::to_string(i) + ": '" +
                                        std::string(text.substr(i, std::max<std::size_t>(1, end - i))) + "'");
            }
            found = byte_ids_[b];
            found_len = 1;
        }
        ids.push_back(found);
        i += found_len;
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        const auto& t = token(id);
        if (int b = parse_byte_token(t); b >= 0) {
            out.push_back(static_cast<char>(b));
        } else if (!is_special(t)) {
            out += t;
        }
    }
    return out;
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= size()) throw TokenizationError("token id " + std::to_string(id) + " out of range");
    return table_[static_cast<std::size_t>(id)];
}

int Tokenizer::id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
}

}  // namespace ircan
