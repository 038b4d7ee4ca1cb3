#include "textmirror/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "textmirror/error.hpp"

namespace textmirror {

std::string_view to_string(AgentKind k) {
    switch (k) {
        case AgentKind::TemplateBot: return "template_bot";
        case AgentKind::MarkovBot: return "markov_bot";
        case AgentKind::EchoBot: return "echo_bot";
        case AgentKind::External: return "external";
    }
    return "echo_bot";
}

std::optional<AgentKind> agent_kind_from_string(std::string_view s) {
    if (s == "template_bot") return AgentKind::TemplateBot;
    if (s == "markov_bot") return AgentKind::MarkovBot;
    if (s == "echo_bot") return AgentKind::EchoBot;
    if (s == "external") return AgentKind::External;
    return std::nullopt;
}

namespace {

constexpr const char* kUnkSurface = "<unk>";

// Built-in TemplateBot scripts. Lines within a script are pairwise
// distinct; spec.seed picks the script.
const std::vector<std::vector<std::string>>& builtin_scripts() {
    static const std::vector<std::vector<std::string>> scripts = {
        {
            "the harbor lights blink twice before dawn",
            "ships carry salt and stories upriver",
            "every chart we own is wrong somewhere",
            "the tide keeps its own ledger",
            "fog turns the pier into a rumor",
            "sailors trade knots for news",
            "the channel buoy rings off key",
            "low water shows the old wreck's ribs",
        },
        {
            "the orchard wakes before the bees do",
            "apples hold last summer in their skins",
            "a ladder leans where the picking stopped",
            "frost writes notes on the top branches",
            "the cider press remembers every autumn",
            "crows audit the rows at noon",
            "windfalls belong to whoever kneels",
            "the gate hinge sings in wet weather",
        },
        {
            "the observatory dome opens like an eyelid",
            "comets keep appointments we forgot making",
            "the astronomer labels jars of darkness",
            "starlight arrives politely late",
            "the telescope mirrors want dusting weekly",
            "orbits are just habits with momentum",
            "the night assistant hums to the cooling fans",
            "dawn closes the shutter on our questions",
        },
        {
            "the bakery argues with the alarm clock",
            "flour snows indoors all year round",
            "the ovens keep a strict opinion of time",
            "crusts crackle their morning report",
            "yeast works the night shift without complaint",
            "the till only respects exact change",
            "day old loaves learn humility",
            "the baker signs her work in scored wheat",
        },
    };
    return scripts;
}

int param_int(const std::map<std::string, std::string>& params,
              const std::string& key, int fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw ConfigError("agent param '" + key + "' is not an integer: " +
                          it->second);
    }
}

double param_double(const std::map<std::string, std::string>& params,
                    const std::string& key, double fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw ConfigError("agent param '" + key + "' is not a number: " +
                          it->second);
    }
}

std::vector<std::string> split_pipes(const std::string& s) {
    // Empty segments are dropped: every script line must be sendable, and
    // a reply is required to be non-empty.
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t pos = s.find('|', start);
        if (pos == std::string::npos) pos = s.size();
        if (pos > start) out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

}  // namespace

namespace detail {

MarkovModel::MarkovModel(const std::string& corpus_text, int order,
                         double alpha, int reply_tokens)
    : order_(order), alpha_(alpha), reply_tokens_(reply_tokens) {
    if (order_ < 1) throw ConfigError("markov order must be >= 1");
    if (alpha_ < 0.0) throw ConfigError("markov alpha must be >= 0");
    if (reply_tokens_ < 1) throw ConfigError("markov reply_tokens must be >= 1");

    std::vector<std::string> tokens = tokenize(corpus_text);
    if (tokens.empty()) throw ConfigError("markov corpus has no tokens");

    for (const auto& tok : tokens) {
        if (tok == kUnkSurface) {
            throw ConfigError("corpus must not contain the reserved token " +
                              std::string(kUnkSurface));
        }
        if (token_ids_.find(tok) == token_ids_.end()) {
            token_ids_[tok] = static_cast<int>(vocab_.size());
            vocab_.push_back(tok);
        }
    }

    const int targets = static_cast<int>(vocab_.size()) + 1;  // vocab + unk
    std::vector<int> ids(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ids[i] = token_ids_[tokens[i]];
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<int> ctx(static_cast<std::size_t>(order_), start_id());
        for (int k = 0; k < order_; ++k) {
            std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - order_ + k;
            if (src >= 0) ctx[static_cast<std::size_t>(k)] = ids[src];
        }
        auto [it, inserted] =
            counts_.try_emplace(ctx, std::vector<double>(targets, 0.0));
        it->second[ids[i]] += 1.0;
        context_totals_[ctx] += 1.0;
    }
}

int MarkovModel::token_id(const std::string& token) const {
    auto it = token_ids_.find(token);
    return it == token_ids_.end() ? unk_id() : it->second;
}

const std::string& MarkovModel::token_surface(int id) const {
    static const std::string unk = kUnkSurface;
    if (id >= 0 && id < static_cast<int>(vocab_.size())) {
        return vocab_[static_cast<std::size_t>(id)];
    }
    return unk;
}

double MarkovModel::transition_probability(const std::vector<int>& context,
                                           int target) const {
    const double targets = static_cast<double>(vocab_.size()) + 1.0;
    double count = 0.0;
    double total = 0.0;
    auto it = counts_.find(context);
    if (it != counts_.end()) {
        count = it->second[static_cast<std::size_t>(target)];
        total = context_totals_.at(context);
    }
    double denom = total + alpha_ * targets;
    if (denom <= 0.0) {
        // alpha == 0 and unseen context: back off to uniform.
        return 1.0 / targets;
    }
    return (count + alpha_) / denom;
}

std::vector<double> MarkovModel::next_token_distribution(
    const std::vector<int>& context) const {
    const int targets = static_cast<int>(vocab_.size()) + 1;
    std::vector<double> dist(static_cast<std::size_t>(targets), 0.0);
    for (int t = 0; t < targets; ++t) {
        dist[static_cast<std::size_t>(t)] = transition_probability(context, t);
    }
    return dist;
}

std::vector<int> MarkovModel::context_for(
    const std::optional<std::string>& incoming) const {
    std::vector<int> ctx(static_cast<std::size_t>(order_), start_id());
    if (!incoming) return ctx;
    std::vector<std::string> toks = tokenize(*incoming);
    int k = order_;
    for (auto it = toks.rbegin(); it != toks.rend() && k > 0; ++it) {
        ctx[static_cast<std::size_t>(--k)] = token_id(*it);
    }
    return ctx;
}

std::string MarkovModel::generate_reply(
    const std::optional<std::string>& incoming, SplitMix64& rng) const {
    std::vector<int> ctx = context_for(incoming);
    std::string out;
    for (int i = 0; i < reply_tokens_; ++i) {
        std::vector<double> dist = next_token_distribution(ctx);
        double r = rng.next_double();
        int chosen = static_cast<int>(dist.size()) - 1;
        double acc = 0.0;
        for (std::size_t t = 0; t < dist.size(); ++t) {
            acc += dist[t];
            if (r < acc) {
                chosen = static_cast<int>(t);
                break;
            }
        }
        if (!out.empty()) out += ' ';
        out += token_surface(chosen);
        ctx.erase(ctx.begin());
        ctx.push_back(chosen);
    }
    return out;
}

double MarkovModel::reply_probability(
    const std::optional<std::string>& incoming,
    const std::string& candidate) const {
    std::vector<std::string> toks = tokenize(candidate);
    if (static_cast<int>(toks.size()) != reply_tokens_) {
        double n = static_cast<double>(std::max<std::size_t>(toks.size(), 1));
        return std::pow(kLikelihoodFloor, n);
    }
    std::vector<int> ctx = context_for(incoming);
    double p = 1.0;
    for (const auto& tok : toks) {
        int id = token_id(tok);
        double p_tok;
        if (id == unk_id() && tok != kUnkSurface) {
            // The model can only ever emit vocabulary tokens or the literal
            // unk surface, so any other form has true probability zero.
            p_tok = kLikelihoodFloor;
        } else {
            p_tok = std::max(transition_probability(ctx, id), kLikelihoodFloor);
        }
        p *= p_tok;
        ctx.erase(ctx.begin());
        ctx.push_back(id);
    }
    return p;
}

}  // namespace detail

Agent Agent::spawn(const AgentSpec& spec, std::uint64_t instance_seed) {
    if (spec.kind == AgentKind::External) {
        throw UnsupportedCapability(
            "external agents cannot be instantiated in-process");
    }
    return Agent(spec, instance_seed);
}

bool Agent::supports_shadow(AgentKind kind) {
    return kind != AgentKind::External;
}

Agent::Agent(AgentSpec spec, std::uint64_t instance_seed)
    : spec_(std::move(spec)), rng_(instance_seed) {
    switch (spec_.kind) {
        case AgentKind::TemplateBot: {
            detail::TemplateState st;
            auto it = spec_.params.find("script_lines");
            if (it != spec_.params.end()) {
                st.lines = split_pipes(it->second);
            } else {
                const auto& scripts = builtin_scripts();
                st.lines = scripts[spec_.seed % scripts.size()];
            }
            if (st.lines.empty()) {
                throw ConfigError("template_bot script has no lines");
            }
            state_ = std::move(st);
            break;
        }
        case AgentKind::MarkovBot: {
            detail::MarkovState st;
            std::string corpus_text;
            if (auto it = spec_.params.find("corpus_text");
                it != spec_.params.end()) {
                corpus_text = it->second;
            } else if (auto f = spec_.params.find("corpus");
                       f != spec_.params.end()) {
                corpus_text = load_corpus_file(f->second);
            } else {
                throw ConfigError(
                    "markov_bot needs a 'corpus' path or 'corpus_text' param");
            }
            st.model = std::make_shared<const detail::MarkovModel>(
                corpus_text, param_int(spec_.params, "order", 1),
                param_double(spec_.params, "alpha", 0.1),
                param_int(spec_.params, "reply_tokens", 6));
            state_ = std::move(st);
            break;
        }
        case AgentKind::EchoBot: {
            detail::EchoState st;
            auto it = spec_.params.find("opener");
            st.opener = it != spec_.params.end() ? it->second : "echo";
            state_ = std::move(st);
            break;
        }
        case AgentKind::External:
            throw UnsupportedCapability("unreachable");
    }
}

std::string Agent::respond(const std::optional<Message>& incoming) {
    if (auto* t = std::get_if<detail::TemplateState>(&state_)) {
        const std::string& line = t->lines[t->next_line % t->lines.size()];
        ++t->next_line;
        return line;
    }
    if (auto* m = std::get_if<detail::MarkovState>(&state_)) {
        std::optional<std::string> in;
        if (incoming) in = incoming->text;
        m->last_incoming = in;
        return m->model->generate_reply(in, rng_);
    }
    auto& e = std::get<detail::EchoState>(state_);
    if (!incoming) return e.opener;
    e.last_incoming = incoming->text;
    return incoming->text;
}

namespace {

// Deterministic kinds assign probability 1 to their scripted next line and
// the per-token floor to everything else.
double deterministic_reply_probability(const std::string& expected,
                                       const std::string& candidate) {
    if (candidate == expected) return 1.0;
    double n =
        static_cast<double>(std::max<std::size_t>(tokenize(candidate).size(), 1));
    return std::pow(kLikelihoodFloor, n);
}

std::optional<std::string> last_incoming_text(const Transcript& history) {
    for (auto it = history.messages.rbegin(); it != history.messages.rend();
         ++it) {
        if (it->seat == Seat::Counterpart) return it->text;
    }
    return std::nullopt;
}

}  // namespace

double Agent::predictive_probability(const Transcript& history,
                                     const std::string& candidate) const {
    if (const auto* t = std::get_if<detail::TemplateState>(&state_)) {
        std::size_t own = 0;
        for (const auto& m : history.messages) {
            if (m.seat == Seat::Subject) ++own;
        }
        return deterministic_reply_probability(t->lines[own % t->lines.size()],
                                               candidate);
    }
    if (const auto* m = std::get_if<detail::MarkovState>(&state_)) {
        return m->model->reply_probability(last_incoming_text(history),
                                           candidate);
    }
    const auto& e = std::get<detail::EchoState>(state_);
    std::optional<std::string> in = last_incoming_text(history);
    return deterministic_reply_probability(in ? *in : e.opener, candidate);
}

std::string load_corpus_file(const std::string& path) {
    std::ifstream f(path, std::ios::in | std::ios::binary);
    if (!f.is_open()) throw ConfigError("cannot open corpus file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    std::string text = buf.str();
    if (tokenize(text).empty()) {
        throw ConfigError("corpus file has no tokens: " + path);
    }
    return text;
}

}  // namespace textmirror
