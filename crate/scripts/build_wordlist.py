"""Regenerate crates/core/data/words.txt.

Takes the most frequent alphabetic English words from the `wordfreq`
package (small_en list), keeps words of three or more letters, adds a
short whitelist of two-letter words and a supplement of programming
vocabulary, and writes one lowercase word per line.

    pip download wordfreq --no-deps && python3 scripts/build_wordlist.py <wordfreq-dir>
"""
import gzip
import re
import sys
from pathlib import Path

import msgpack

TOP_N = 20000

TWO_LETTER = """
an as at be by do go he if in is it me my no of on or so to up us we
id io ui os ok
""".split()

SUPPLEMENT = """
alloc realloc malloc calloc dealloc mutex async sync enum struct bool int
char const func proc exec stdin stdout stderr ioctl mmap json xml http https
url uri utf ascii hex tmp temp cmd ctx obj attr elem idx num var val len buf
ptr arg args argv param params config opt opts regex lib libc hash crc md5
sha tcp udp dns ssl tls gpu cpu png jpeg gif bmp rgb rgba html css sql api
callback
iterator allocator initializer
deallocate initialization initialize directories directory descriptor
utilities utility statistics semaphore timestamp variable variables
argument arguments parameter parameters attribute attributes element
temporary destination configuration pointer buffer buffers length number index
message error context source command compare calculate count delete remove
move copy read write function process identifier database document
environment execute extension format header image information library list
memory manager minimum maximum module object packet position previous
receive reference request response return sequence signal socket size
system table user vector window transfer address authentication binary
button character clear column columns current debug description device
difference duplicate encode escape expression generate group hardware
implementation increment keyboard language line location management newline
operation operations option options percent package point pixel quantity
random rectangle register transmit second segment select separator
specification server standard stream service synchronize thread token text
version decrement decode file end make value item set get hid smooth audio
range check open
parse parser parsing append prepend byte bytes enqueue dequeue serialize
deserialize encoder decoder tokenize tokenizer lookup bitmap endian checksum getter
setter iterate cursor widget toolbar resize reload emit timeout retry
compress decompress inflate deflate unzip truncate unicode unescape unquote concat
rename unlink symlink
""".split()


def main(src: str) -> None:
    data = msgpack.load(gzip.open(Path(src) / "wordfreq/data/small_en.msgpack.gz"), raw=False)
    ranked = [w for bucket in data[1:] for w in bucket if re.fullmatch("[a-z]+", w)]
    words = {w for w in ranked[:TOP_N] if len(w) >= 3}
    words.update(TWO_LETTER)
    words.update(SUPPLEMENT)
    out = Path(__file__).resolve().parent.parent / "crates/core/data/words.txt"
    with open(out, "w") as fh:
        fh.write("# Word list derived from the wordfreq project (small_en frequency list,\n")
        fh.write("# CC BY-SA 4.0) plus a programming-vocabulary supplement.\n")
        for w in sorted(words):
            fh.write(w + "\n")
    print(f"wrote {len(words)} words to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
