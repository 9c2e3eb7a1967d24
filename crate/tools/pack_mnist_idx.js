#!/usr/bin/env node
// Packs the per-digit JSON arrays shipped with the `mnist` npm package
// (10,000 MNIST digits, 784 floats each in [0,1]) into the classic IDX
// container pair expected by the toolkit's loader:
//
//   data/mnist/train-images-idx3-ubyte   magic 0x00000803, u8 pixels
//   data/mnist/train-labels-idx1-ubyte   magic 0x00000801, u8 labels
//
// Pixels are re-quantized with round(v * 255), which inverts the /255
// normalization the package applied to the original ubyte data. Sample
// order is shuffled once with a fixed LCG seed so the files are not
// sorted by class.
//
// Usage: node tools/pack_mnist_idx.js <node_modules/mnist/src/digits> <outdir>

const fs = require("fs");
const path = require("path");

const srcDir = process.argv[2];
const outDir = process.argv[3];
if (!srcDir || !outDir) {
  console.error("usage: pack_mnist_idx.js <digits-dir> <outdir>");
  process.exit(1);
}

const images = [];
const labels = [];
for (let d = 0; d < 10; d++) {
  const flat = JSON.parse(
    fs.readFileSync(path.join(srcDir, `${d}.json`), "utf8")
  ).data;
  const n = flat.length / 784;
  for (let i = 0; i < n; i++) {
    const px = Buffer.alloc(784);
    for (let j = 0; j < 784; j++) {
      px[j] = Math.round(flat[i * 784 + j] * 255);
    }
    images.push(px);
    labels.push(d);
  }
}

// Fisher-Yates with a fixed 48-bit LCG so the pack is reproducible.
let state = 0x2545f4914f6cddn;
const nextU32 = () => {
  state = (state * 25214903917n + 11n) & 0xffffffffffffn;
  return Number(state >> 16n) >>> 0;
};
for (let i = images.length - 1; i > 0; i--) {
  const j = nextU32() % (i + 1);
  [images[i], images[j]] = [images[j], images[i]];
  [labels[i], labels[j]] = [labels[j], labels[i]];
}

const n = images.length;
const imgHeader = Buffer.alloc(16);
imgHeader.writeUInt32BE(0x00000803, 0);
imgHeader.writeUInt32BE(n, 4);
imgHeader.writeUInt32BE(28, 8);
imgHeader.writeUInt32BE(28, 12);
const lblHeader = Buffer.alloc(8);
lblHeader.writeUInt32BE(0x00000801, 0);
lblHeader.writeUInt32BE(n, 4);

fs.mkdirSync(outDir, { recursive: true });
fs.writeFileSync(
  path.join(outDir, "train-images-idx3-ubyte"),
  Buffer.concat([imgHeader, ...images])
);
fs.writeFileSync(
  path.join(outDir, "train-labels-idx1-ubyte"),
  Buffer.concat([lblHeader, Buffer.from(labels)])
);
console.log(`wrote ${n} samples to ${outDir}`);
