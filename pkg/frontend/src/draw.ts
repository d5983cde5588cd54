// Thin canvas painter for the display lists produced by scene.ts.

import { Scene, Shape, CAMERA_PANEL, DECK_PANEL } from "./scene.js";

function paintShape(ctx: CanvasRenderingContext2D, shape: Shape): void {
  switch (shape.kind) {
    case "rect":
      if (shape.fill !== undefined) {
        ctx.fillStyle = shape.fill;
        ctx.fillRect(shape.x, shape.y, shape.w, shape.h);
      }
      ctx.strokeStyle = shape.stroke;
      ctx.lineWidth = shape.lineWidth;
      ctx.strokeRect(shape.x, shape.y, shape.w, shape.h);
      break;
    case "dot":
      ctx.fillStyle = shape.color;
      ctx.beginPath();
      ctx.arc(shape.x, shape.y, shape.r, 0, 2 * Math.PI);
      ctx.fill();
      break;
    case "polyline":
      ctx.strokeStyle = shape.color;
      ctx.lineWidth = shape.lineWidth;
      ctx.beginPath();
      shape.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
      ctx.stroke();
      break;
    case "text":
      ctx.fillStyle = shape.color;
      ctx.font = `${shape.size}px sans-serif`;
      ctx.fillText(shape.text, shape.x, shape.y);
      break;
    case "marker": {
      // heading arrow: deck yaw 0 points fore (up the screen)
      ctx.strokeStyle = shape.color;
      ctx.fillStyle = shape.color;
      ctx.lineWidth = 2;
      const a = shape.yaw + Math.PI / 2; // screen angle of the nose
      const nx = shape.x + shape.size * Math.cos(a);
      const ny = shape.y - shape.size * Math.sin(a);
      ctx.beginPath();
      ctx.arc(shape.x, shape.y, shape.size / 2, 0, 2 * Math.PI);
      ctx.fill();
      ctx.beginPath();
      ctx.moveTo(shape.x, shape.y);
      ctx.lineTo(nx, ny);
      ctx.stroke();
      break;
    }
  }
}

export function drawScene(
  cameraCtx: CanvasRenderingContext2D,
  deckCtx: CanvasRenderingContext2D,
  scene: Scene,
): void {
  cameraCtx.fillStyle = "#0f172a";
  cameraCtx.fillRect(0, 0, CAMERA_PANEL.width, CAMERA_PANEL.height);
  for (const shape of scene.camera) {
    paintShape(cameraCtx, shape);
  }
  deckCtx.fillStyle = "#1e293b";
  deckCtx.fillRect(0, 0, DECK_PANEL.width, DECK_PANEL.height);
  for (const shape of scene.deck) {
    paintShape(deckCtx, shape);
  }
}
