#include "icshunt/event_store.hpp"
#include "icshunt/error.hpp"
#include "json_records.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace icshunt {

using nlohmann::json;

std::string_view to_string(EventKind kind) noexcept {
    switch (kind) {
    case EventKind::detection: return "detection";
    case EventKind::hypothesis: return "hypothesis";
    case EventKind::model_run: return "model_run";
    }
    return "detection";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
    for (auto k : {EventKind::detection, EventKind::hypothesis, EventKind::model_run})
        if (to_string(k) == text) return k;
    return std::nullopt;
}

namespace {

constexpr char file_magic[8] = {'I', 'C', 'S', 'H', 'L', 'O', 'G', '\0'};
constexpr std::uint32_t format_version = 1;
constexpr std::size_t file_header_size = 12;
constexpr std::size_t record_header_size = 8;  // length, crc32
constexpr std::uint32_t max_record_size = 64u << 20;

void put_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint32_t get_le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint32_t checksum(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void write_all(int fd, std::string_view bytes, const std::filesystem::path& path) {
    while (!bytes.empty()) {
        const auto n = ::write(fd, bytes.data(), bytes.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::durable_write, "write to " + path.string() + " failed: " + std::strerror(errno));
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

// Canonical payload and the record it describes; throws validation.
json canonical_payload(EventKind kind, std::string_view payload) {
    json doc;
    try {
        doc = json::parse(payload);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::validation, std::string("event payload is not JSON: ") + e.what());
    }
    switch (kind) {
    case EventKind::detection: detail::detection_from(doc); break;
    case EventKind::hypothesis: detail::hypothesis_from(doc); break;
    case EventKind::model_run: detail::model_run_from(doc); break;
    }
    return doc;
}

Timestamp event_time(EventKind kind, const json& doc) {
    switch (kind) {
    case EventKind::detection: return Timestamp{doc.at("timestamp_us").get<std::int64_t>()};
    case EventKind::hypothesis: return Timestamp{doc.at("updated_at_us").get<std::int64_t>()};
    case EventKind::model_run: return Timestamp{doc.at("created_at_us").get<std::int64_t>()};
    }
    return {};
}

}  // namespace

EventStore::EventStore(std::filesystem::path path, StoreOptions options, int fd)
    : path_(std::move(path)), options_(options), fd_(fd) {}

EventStore::~EventStore() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<EventStore> EventStore::open(const std::filesystem::path& path, StoreOptions options) {
    if (options.max_page_size == 0) throw Error(ErrorCode::validation, "max page size must be positive");
    const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::io, "cannot open store " + path.string() + ": " + std::strerror(errno));
    std::unique_ptr<EventStore> store(new EventStore(path, options, fd));
    store->load();
    return store;
}

void EventStore::load() {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw Error(ErrorCode::io, "cannot stat " + path_.string());
    std::string bytes(static_cast<std::size_t>(st.st_size), '\0');
    std::size_t got = 0;
    while (got < bytes.size()) {
        const auto n = ::pread(fd_, bytes.data() + got, bytes.size() - got, static_cast<off_t>(got));
        if (n <= 0) throw Error(ErrorCode::io, "cannot read " + path_.string());
        got += static_cast<std::size_t>(n);
    }

    if (bytes.empty()) {
        std::string header(file_magic, sizeof file_magic);
        put_le32(header, format_version);
        write_all(fd_, header, path_);
        if (options_.sync) ::fdatasync(fd_);
        return;
    }
    if (bytes.size() < file_header_size || std::memcmp(bytes.data(), file_magic, sizeof file_magic) != 0)
        throw Error(ErrorCode::integrity, path_.string() + " is not an event store (bad magic)");
    const auto version = get_le32(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
    if (version != format_version)
        throw Error(ErrorCode::integrity, path_.string() + " has unsupported format version " + std::to_string(version));

    std::size_t offset = file_header_size;
    while (offset < bytes.size()) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
        const std::size_t remaining = bytes.size() - offset;
        if (remaining < record_header_size) break;
        const auto length = get_le32(p);
        const auto crc = get_le32(p + 4);
        if (length > max_record_size || remaining - record_header_size < length) break;
        const std::string_view body(bytes.data() + offset + record_header_size, length);
        const bool last = offset + record_header_size + length == bytes.size();
        if (checksum(body) != crc) {
            if (last) break;
            throw Error(ErrorCode::integrity, path_.string() + ": checksum mismatch at byte " + std::to_string(offset) +
                                                  "; restore from backup or truncate the file at this offset");
        }
        try {
            const auto doc = json::parse(body);
            StoredEvent event;
            event.id = doc.at("id").get<std::uint64_t>();
            auto kind = parse_event_kind(doc.at("kind").get<std::string>());
            if (!kind || event.id != entries_.size() + 1) throw Error(ErrorCode::integrity, "bad record header");
            event.kind = *kind;
            event.created_at = Timestamp{doc.at("created_at_us").get<std::int64_t>()};
            event.payload = doc.at("payload").dump();
            index(std::move(event));
        } catch (const std::exception& e) {
            throw Error(ErrorCode::integrity, path_.string() + ": unreadable record at byte " + std::to_string(offset) +
                                                  " (" + e.what() + "); restore from backup or truncate the file");
        }
        offset += record_header_size + length;
    }
    if (offset < bytes.size()) {
        recovered_bytes_ = bytes.size() - offset;
        spdlog::warn("event store {}: discarding {} bytes of a torn final record", path_.string(), recovered_bytes_);
        if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0)
            throw Error(ErrorCode::io, "cannot truncate torn tail of " + path_.string());
    }
    ::lseek(fd_, 0, SEEK_END);
}

void EventStore::index(StoredEvent event) {
    const auto doc = json::parse(event.payload);
    Entry entry;
    const std::size_t position = entries_.size();
    if (doc.contains("attacker_ip"))
        if (auto ip = Ipv4Address::parse(doc.at("attacker_ip").get<std::string>())) entry.attacker = ip->value;
    if (event.kind == EventKind::detection) {
        entry.attack_type = doc.at("attack_type").get<std::string>();
        entry.record_id = doc.at("id").get<std::string>();
        detection_index_.emplace(entry.record_id, position);
    } else if (event.kind == EventKind::hypothesis) {
        entry.status = parse_hypothesis_status(doc.at("status").get<std::string>());
        entry.record_id = doc.at("id").get<std::string>();
        auto& versions = hypothesis_index_[entry.record_id];
        for (const auto& d : doc.at("detection_ids")) {
            auto& linked = hypotheses_by_detection_[d.get<std::string>()];
            if (std::find(linked.begin(), linked.end(), entry.record_id) == linked.end())
                linked.push_back(entry.record_id);
        }
        versions.push_back(position);
    }
    if (entry.attacker) by_attacker_[*entry.attacker].push_back(position);
    entry.event = std::move(event);
    entries_.push_back(std::move(entry));
}

std::uint64_t EventStore::append(EventKind kind, std::string_view payload) {
    const auto doc = canonical_payload(kind, payload);
    std::lock_guard append_lock(append_mutex_);
    StoredEvent event;
    {
        std::shared_lock read(data_mutex_);
        event.id = entries_.size() + 1;
    }
    event.kind = kind;
    event.created_at = event_time(kind, doc);
    event.payload = doc.dump();

    const json record{{"id", event.id},
                      {"kind", to_string(kind)},
                      {"created_at_us", event.created_at.micros},
                      {"payload", doc}};
    const auto body = record.dump();
    std::string framed;
    framed.reserve(record_header_size + body.size());
    put_le32(framed, static_cast<std::uint32_t>(body.size()));
    put_le32(framed, checksum(body));
    framed += body;

    const auto end = ::lseek(fd_, 0, SEEK_END);
    try {
        write_all(fd_, framed, path_);
        if (options_.sync && ::fdatasync(fd_) != 0)
            throw Error(ErrorCode::durable_write, "fdatasync on " + path_.string() + " failed: " + std::strerror(errno));
    } catch (const Error&) {
        if (end >= 0 && ::ftruncate(fd_, end) != 0) spdlog::error("event store: cannot roll back partial write");
        throw;
    }

    {
        std::unique_lock write(data_mutex_);
        index(event);
    }
    std::vector<Listener> listeners;
    {
        std::lock_guard lock(listener_mutex_);
        for (const auto& [token, fn] : listeners_) listeners.push_back(fn);
    }
    for (const auto& fn : listeners) fn(event);
    return event.id;
}

std::uint64_t EventStore::append(const Detection& detection) { return append(EventKind::detection, to_json(detection)); }
std::uint64_t EventStore::append(const Hypothesis& hypothesis) {
    return append(EventKind::hypothesis, to_json(hypothesis));
}
std::uint64_t EventStore::append(const ModelRun& run) { return append(EventKind::model_run, to_json(run)); }

bool EventStore::matches(const Entry& entry, const QueryFilter& filter) const {
    const auto& e = entry.event;
    if (filter.kind && e.kind != *filter.kind) return false;
    if (filter.from && e.created_at < *filter.from) return false;
    if (filter.to && e.created_at > *filter.to) return false;
    if (filter.attacker_ip && entry.attacker != filter.attacker_ip->value) return false;
    if (filter.attack_type && (e.kind != EventKind::detection || entry.attack_type != *filter.attack_type)) return false;
    if (filter.status && (e.kind != EventKind::hypothesis || entry.status != *filter.status)) return false;
    if (filter.latest_versions_only && e.kind == EventKind::hypothesis &&
        hypothesis_index_.at(entry.record_id).back() + 1 != e.id)
        return false;
    return true;
}

QueryResult EventStore::query(const QueryFilter& filter) const {
    if (filter.limit > options_.max_page_size)
        throw Error(ErrorCode::validation, "limit " + std::to_string(filter.limit) + " exceeds the page size of " +
                                               std::to_string(options_.max_page_size));
    if (filter.from && filter.to && *filter.from > *filter.to)
        throw Error(ErrorCode::validation, "time range starts after it ends");
    std::shared_lock lock(data_mutex_);
    QueryResult result;
    auto consider = [&](std::size_t position) {
        const auto& entry = entries_[position];
        if (!matches(entry, filter)) return;
        if (result.total >= filter.offset && result.events.size() < filter.limit) result.events.push_back(entry.event);
        ++result.total;
    };
    if (filter.attacker_ip) {
        auto it = by_attacker_.find(filter.attacker_ip->value);
        if (it != by_attacker_.end())
            for (auto p = it->second.rbegin(); p != it->second.rend(); ++p) consider(*p);
    } else {
        for (std::size_t i = entries_.size(); i-- > 0;) consider(i);
    }
    return result;
}

StoredEvent EventStore::get(std::uint64_t id) const {
    std::shared_lock lock(data_mutex_);
    if (id == 0 || id > entries_.size()) throw Error(ErrorCode::not_found, "no event with id " + std::to_string(id));
    return entries_[id - 1].event;
}

std::optional<StoredEvent> EventStore::find_detection(std::string_view detection_id) const {
    std::shared_lock lock(data_mutex_);
    auto it = detection_index_.find(detection_id);
    if (it == detection_index_.end()) return std::nullopt;
    return entries_[it->second].event;
}

std::optional<StoredEvent> EventStore::latest_hypothesis(std::string_view hypothesis_id) const {
    std::shared_lock lock(data_mutex_);
    auto it = hypothesis_index_.find(hypothesis_id);
    if (it == hypothesis_index_.end()) return std::nullopt;
    return entries_[it->second.back()].event;
}

std::size_t EventStore::hypothesis_versions(std::string_view hypothesis_id) const {
    std::shared_lock lock(data_mutex_);
    auto it = hypothesis_index_.find(hypothesis_id);
    return it == hypothesis_index_.end() ? 0 : it->second.size();
}

std::vector<StoredEvent> EventStore::hypotheses_for_detection(std::string_view detection_id) const {
    std::shared_lock lock(data_mutex_);
    std::vector<StoredEvent> out;
    auto it = hypotheses_by_detection_.find(detection_id);
    if (it == hypotheses_by_detection_.end()) return out;
    for (const auto& id : it->second) out.push_back(entries_[hypothesis_index_.find(id)->second.back()].event);
    return out;
}

std::size_t EventStore::size() const {
    std::shared_lock lock(data_mutex_);
    return entries_.size();
}

std::uint64_t EventStore::last_id() const { return size(); }

std::size_t EventStore::subscribe(Listener listener) {
    std::lock_guard lock(listener_mutex_);
    listeners_.emplace(next_token_, std::move(listener));
    return next_token_++;
}

void EventStore::unsubscribe(std::size_t token) {
    std::lock_guard lock(listener_mutex_);
    listeners_.erase(token);
}

}  // namespace icshunt
