// Glue produced by `wasm-bindgen --target web` lives in ./pkg.
import init, { sentenceGraph, explainSentence, structuralMetrics } from "./pkg/treexplain_demo.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";

function el(name, attrs, text) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

// Tidy-ish layout: depth gives the row, leaves take successive columns and
// parents sit over the middle of their children.
function layout(graph) {
  const children = new Map(graph.nodes.map((n) => [n.id, []]));
  for (const [s, d] of graph.edges) children.get(s).push(d);
  const x = new Map();
  let next = 0;
  const place = (v) => {
    const kids = children.get(v);
    if (kids.length === 0) {
      x.set(v, next++);
    } else {
      kids.forEach(place);
      x.set(v, (x.get(kids[0]) + x.get(kids[kids.length - 1])) / 2);
    }
  };
  place(graph.root);
  return { x, columns: Math.max(next, 1) };
}

function draw(graph, picked = new Set()) {
  const svg = $("canvas");
  svg.replaceChildren();
  const { x, columns } = layout(graph);
  const depth = Math.max(...graph.nodes.map((n) => n.depth)) + 1;
  const px = (v) => 40 + (x.get(v) * 820) / Math.max(columns - 1, 1);
  const py = (n) => 30 + (n.depth * 300) / Math.max(depth - 1, 1);
  const byId = new Map(graph.nodes.map((n) => [n.id, n]));
  for (const [s, d] of graph.edges) {
    svg.append(el("line", { x1: px(s), y1: py(byId.get(s)), x2: px(d), y2: py(byId.get(d)), stroke: "#999" }));
  }
  for (const n of graph.nodes) {
    const cls = (n.word ? "word" : "special") + (picked.has(n.id) ? " picked" : "");
    svg.append(el("circle", { cx: px(n.id), cy: py(n), r: 14, class: cls }));
    const label = n.word ? n.label : n.label.split(" ").map((w) => w[0]).join("");
    svg.append(el("text", { x: px(n.id), y: py(n) + 4, "text-anchor": "middle", "font-size": 10 }, label));
    svg.lastChild.append(el("title", {}, `${n.id}: ${n.label}`));
  }
}

function run(action) {
  $("error").textContent = "";
  try {
    action($("tree").value);
  } catch (e) {
    $("error").textContent = String(e);
  }
}

await init();

$("show-graph").onclick = () =>
  run((tree) => {
    const g = JSON.parse(sentenceGraph(tree));
    draw(g);
    $("out").textContent = `${g.nodes.length} nodes, ${g.edges.length} edges`;
  });

$("explain").onclick = () =>
  run((tree) => {
    const rollout = Number($("rollout").value);
    const maxNodes = Number($("max-nodes").value);
    const r = JSON.parse(explainSentence(tree, rollout, maxNodes));
    draw(r.graph, new Set(r.subgraph));
    const fmt = (v) => v.toFixed(3);
    $("out").textContent = [
      `predicted class  ${r.predicted_class}`,
      `subgraph         [${r.subgraph.join(", ")}]`,
      `masked score     ${fmt(r.s_masked)}`,
      `unmasked score   ${fmt(r.s_unmasked)}`,
      `fidelity         ${fmt(r.fidelity)}`,
      `sparsity         ${fmt(r.sparsity)}`,
      `verdict          ${r.verdict}`,
      `words            ${r.words.join(" ") || "(none)"}`,
    ].join("\n");
  });

$("metrics").onclick = () =>
  run((tree) => {
    draw(JSON.parse(sentenceGraph(tree)));
    $("out").textContent = JSON.stringify(JSON.parse(structuralMetrics(tree)), null, 2);
  });

$("show-graph").click();
