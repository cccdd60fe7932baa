import { ApiClient } from "./api.js";
import { ChartBlock } from "./block.js";
import { drawSeries } from "./render.js";
import type { TimeRange } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const CHART_W = 860;
const CHART_H = 240;
const COLORS = ["#1668dc", "#d4380d", "#389e0d", "#722ed1", "#d48806", "#08979c"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  if (text) node.textContent = text;
  return node;
}

class BlockView {
  readonly root: HTMLElement;
  private svg: SVGSVGElement;
  private status: HTMLElement;
  private tagList: HTMLElement;
  private dragStart: number | null = null;
  private dragRect: SVGRectElement | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly block: ChartBlock,
    onRemove: (view: BlockView) => void,
  ) {
    this.root = el("section", { class: "block" });
    const bar = el("div", { class: "bar" });
    const tagInput = el("input", {
      list: `tags-${block.id}`,
      placeholder: "add tag…",
      class: "tag-input",
    });
    const datalist = el("datalist", { id: `tags-${block.id}` });
    tagInput.addEventListener("input", async () => {
      const prefix = tagInput.value;
      if (!prefix) return;
      try {
        const tags = await this.api.tags(prefix, 20);
        datalist.replaceChildren(...tags.map((t) => el("option", { value: t.name })));
        if (tags.some((t) => t.name === prefix)) {
          block.addTag(prefix);
          tagInput.value = "";
        }
      } catch {
        /* typeahead failures are non-fatal */
      }
    });

    const resSelect = el("select", { class: "res" });
    for (const mode of ["auto", "raw", "min", "hour", "day"]) {
      resSelect.append(el("option", { value: mode }, mode));
    }
    resSelect.addEventListener("change", () => block.setResolutionMode(resSelect.value as never));

    const liveBox = el("input", { type: "checkbox", title: "live tail" });
    liveBox.addEventListener("change", () => block.setLive(liveBox.checked));

    const zoomOut = el("button", {}, "zoom out");
    zoomOut.addEventListener("click", () => block.zoomOut());
    const left = el("button", {}, "◀");
    left.addEventListener("click", () => block.shift(-1));
    const right = el("button", {}, "▶");
    right.addEventListener("click", () => block.shift(1));

    const download = el("button", {}, "csv");
    download.addEventListener("click", () => {
      const tag = block.state.tags[0];
      if (tag) window.open(this.api.downloadUrl(tag, block.state.range));
    });

    const remove = el("button", { class: "remove" }, "✕");
    remove.addEventListener("click", () => {
      block.dispose();
      onRemove(this);
    });

    this.status = el("span", { class: "status" });
    this.tagList = el("span", { class: "tags" });
    bar.append(tagInput, datalist, this.tagList, resSelect, el("label", {}, "live"), liveBox, left, right, zoomOut, download, this.status, remove);

    this.svg = document.createElementNS(SVG_NS, "svg");
    this.svg.setAttribute("viewBox", `0 0 ${CHART_W} ${CHART_H}`);
    this.svg.setAttribute("class", "chart");
    this.wireZoomDrag();

    this.root.append(bar, this.svg);
    block.onUpdate = () => this.render();
  }

  private wireZoomDrag(): void {
    const xToTime = (clientX: number): number => {
      const rect = this.svg.getBoundingClientRect();
      const frac = Math.min(Math.max((clientX - rect.left) / rect.width, 0), 1);
      const r = this.block.state.range;
      return r.from + frac * (r.to - r.from);
    };
    this.svg.addEventListener("mousedown", (ev) => {
      this.dragStart = xToTime(ev.clientX);
      this.dragRect = document.createElementNS(SVG_NS, "rect");
      this.dragRect.setAttribute("class", "drag");
      this.dragRect.setAttribute("y", "0");
      this.dragRect.setAttribute("height", String(CHART_H));
      this.svg.append(this.dragRect);
    });
    this.svg.addEventListener("mousemove", (ev) => {
      if (this.dragStart === null || !this.dragRect) return;
      const r = this.block.state.range;
      const toX = (t: number) => ((t - r.from) / (r.to - r.from)) * CHART_W;
      const a = toX(this.dragStart);
      const b = toX(xToTime(ev.clientX));
      this.dragRect.setAttribute("x", String(Math.min(a, b)));
      this.dragRect.setAttribute("width", String(Math.abs(b - a)));
    });
    const finish = (ev: MouseEvent) => {
      if (this.dragStart === null) return;
      const end = xToTime(ev.clientX);
      const sub: TimeRange = { from: Math.min(this.dragStart, end), to: Math.max(this.dragStart, end) };
      this.dragStart = null;
      this.dragRect?.remove();
      this.dragRect = null;
      if (sub.to - sub.from > 1000) {
        this.block.zoomTo(sub);
      }
    };
    this.svg.addEventListener("mouseup", finish);
    this.svg.addEventListener("mouseleave", (ev) => finish(ev));
  }

  render(): void {
    const state = this.block.state;
    this.svg.querySelectorAll("path").forEach((p) => p.remove());
    let ci = 0;
    for (const tag of state.tags) {
      const series = state.series.get(tag);
      if (!series) continue;
      const drawn = drawSeries(series, state.range, CHART_W, CHART_H);
      const color = COLORS[ci++ % COLORS.length];
      if (drawn.band) {
        const band = document.createElementNS(SVG_NS, "path");
        band.setAttribute("d", drawn.band);
        band.setAttribute("fill", color);
        band.setAttribute("opacity", "0.18");
        this.svg.append(band);
      }
      if (drawn.line) {
        const line = document.createElementNS(SVG_NS, "path");
        line.setAttribute("d", drawn.line);
        line.setAttribute("fill", "none");
        line.setAttribute("stroke", color);
        line.setAttribute("stroke-width", "1.4");
        this.svg.append(line);
      }
    }
    this.tagList.textContent = state.tags.join(", ");
    const from = new Date(state.range.from).toISOString().slice(5, 19);
    const to = new Date(state.range.to).toISOString().slice(5, 19);
    this.status.textContent =
      `${from}..${to} @${state.effectiveResolution}` + (state.stale ? " ⚠ stale" : "");
    this.status.classList.toggle("stale", state.stale);
  }
}

export class App {
  private readonly api: ApiClient;
  private readonly blocks: BlockView[] = [];
  private blocksHost!: HTMLElement;

  constructor(baseUrl: string) {
    this.api = new ApiClient(baseUrl);
  }

  mount(root: HTMLElement): void {
    const toolbar = el("div", { class: "toolbar" });
    const addBtn = el("button", {}, "+ chart block");
    addBtn.addEventListener("click", () => this.addBlock());

    const upload = el("input", { type: "file", accept: ".csv", style: "display:none" });
    const uploadBtn = el("button", {}, "upload csv");
    const uploadMsg = el("span", { class: "upload-msg" });
    uploadBtn.addEventListener("click", () => upload.click());
    upload.addEventListener("change", async () => {
      const file = upload.files?.[0];
      if (!file) return;
      try {
        const result = await this.api.upload(await file.text());
        uploadMsg.textContent = result.error
          ? `imported ${result.imported}, error at line ${result.line}: ${result.error}`
          : `imported ${result.imported} rows`;
      } catch (err) {
        uploadMsg.textContent = String(err);
      }
    });

    toolbar.append(addBtn, uploadBtn, upload, uploadMsg);
    this.blocksHost = el("div", { class: "blocks" });
    root.append(toolbar, this.blocksHost);
    this.addBlock();
  }

  addBlock(): BlockView {
    const now = Date.now();
    const block = new ChartBlock(this.api, { from: now - 10 * 60_000, to: now });
    const view = new BlockView(this.api, block, (v) => this.removeBlock(v));
    this.blocks.push(view);
    this.blocksHost.append(view.root);
    block.setLive(true);
    return view;
  }

  removeBlock(view: BlockView): void {
    const i = this.blocks.indexOf(view);
    if (i >= 0) {
      this.blocks.splice(i, 1);
      view.root.remove();
    }
  }
}
